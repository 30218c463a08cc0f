//! Harness configuration file.
//!
//! ```text
//! epochs = 20
//! mode = gt_and_fp
//! seed = 7
//! gt_count.car = 2
//! fp_count.car = 3
//! train_data = data/train
//! val_data = data/val
//! ```
//!
//! `fp_init_epoch` defaults to 40% of `epochs` and `fp_update_interval` to
//! 10% (both at least 1). Data paths are relative to the config file.

use std::path::{Path, PathBuf};

use crate::augmentor::{AugmentationPlan, PLAN_KEYS};
use crate::dataset::ClassSet;
use crate::error::{Error, Result};
use crate::evaluator::EvalConfig;
use crate::fp_miner::MiningConfig;
use crate::fsutil::read_to_string;
use crate::keyval::KeyValues;
use crate::toy_detector::ToyConfig;

use super::modes::ModeRegistry;

const KEYS: &[&str] = &[
    "epochs",
    "fp_init_epoch",
    "fp_update_interval",
    "mode",
    "seed",
    "min_points",
    "score_threshold",
    "grid_cell",
    "min_extent",
    "emit_threshold",
    "match_threshold",
    "learning_rate",
    "iou_threshold.*",
    "fp_count_threshold",
    "train_data",
    "val_data",
];

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub epochs: u32,
    /// First epoch (1-based) at whose start the FP database is built.
    pub fp_init_epoch: u32,
    pub fp_update_interval: u32,
    pub plan: AugmentationPlan,
    pub mode: String,
    pub seed: u64,
    /// Shared by the GT database build and FP mining.
    pub mining: MiningConfig,
    pub detector: ToyConfig,
    pub eval: EvalConfig,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
}

pub fn default_fp_init_epoch(epochs: u32) -> u32 {
    ((0.4 * epochs as f64).round() as u32).max(1)
}

pub fn default_fp_update_interval(epochs: u32) -> u32 {
    ((0.1 * epochs as f64).round() as u32).max(1)
}

impl HarnessConfig {
    pub fn new(epochs: u32, mode: &str, seed: u64, classes: &ClassSet) -> Self {
        Self {
            epochs,
            fp_init_epoch: default_fp_init_epoch(epochs),
            fp_update_interval: default_fp_update_interval(epochs),
            plan: AugmentationPlan::zero(classes.len()),
            mode: mode.to_string(),
            seed,
            mining: MiningConfig::default(),
            detector: ToyConfig::default(),
            eval: EvalConfig::for_classes(classes),
            train_data: None,
            val_data: None,
        }
    }

    pub fn validate(&self, classes: &ClassSet, registry: &ModeRegistry) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.fp_init_epoch == 0 || self.fp_init_epoch > self.epochs {
            return Err(Error::Config(format!(
                "fp_init_epoch must lie in 1..={}, got {}",
                self.epochs, self.fp_init_epoch
            )));
        }
        if self.fp_update_interval == 0 {
            return Err(Error::Config("fp_update_interval must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mining.score_threshold) {
            return Err(Error::Config("score_threshold must lie in [0, 1]".into()));
        }
        registry.get(&self.mode)?;
        self.plan.validate(classes.len())?;
        self.detector.validate()?;
        self.eval.validate(classes.len())
    }

    /// Whether the FP database is rebuilt at the start of `epoch`.
    pub fn is_rebuild_epoch(&self, epoch: u32) -> bool {
        epoch >= self.fp_init_epoch && (epoch - self.fp_init_epoch).is_multiple_of(self.fp_update_interval)
    }

    pub fn parse(text: &str, source: &str, classes: &ClassSet) -> Result<Self> {
        let kv = KeyValues::parse(source, text)?;
        let known: Vec<&str> = KEYS.iter().chain(PLAN_KEYS).copied().collect();
        kv.reject_unknown(&known)?;

        let epochs: u32 = kv
            .get("epochs")?
            .ok_or_else(|| Error::Config(format!("{source}: missing `epochs`")))?;
        let mut c = Self::new(epochs, "gt_and_fp", 0, classes);
        c.fp_init_epoch = kv.get_or("fp_init_epoch", c.fp_init_epoch)?;
        c.fp_update_interval = kv.get_or("fp_update_interval", c.fp_update_interval)?;
        c.mode = kv.get_or("mode", c.mode)?;
        c.seed = kv.get_or("seed", c.seed)?;
        c.plan = AugmentationPlan::from_keyvalues(&kv, classes)?;
        c.mining.min_points = kv.get_or("min_points", c.mining.min_points)?;
        c.mining.score_threshold = kv.get_or("score_threshold", c.mining.score_threshold)?;
        let d = &mut c.detector;
        d.grid_cell = kv.get_or("grid_cell", d.grid_cell)?;
        d.min_extent = kv.get_or("min_extent", d.min_extent)?;
        d.emit_threshold = kv.get_or("emit_threshold", d.emit_threshold)?;
        d.match_threshold = kv.get_or("match_threshold", d.match_threshold)?;
        d.learning_rate = kv.get_or("learning_rate", d.learning_rate)?;
        for (name, value) in kv.with_prefix("iou_threshold") {
            let key = format!("iou_threshold.{name}");
            let id = classes
                .id(name)
                .ok_or_else(|| Error::Config(format!("`{key}` names unknown class `{name}`")))?;
            c.eval.iou_thresholds[id] = kv.parse_value(&key, value)?;
        }
        c.eval.fp_score_threshold = kv.get_or("fp_count_threshold", c.eval.fp_score_threshold)?;
        c.train_data = kv.raw("train_data").map(PathBuf::from);
        c.val_data = kv.raw("val_data").map(PathBuf::from);
        c.validate(classes, &ModeRegistry::builtin())?;
        Ok(c)
    }

    /// Parse a config file, resolving data paths against its directory.
    pub fn load(path: &Path, classes: &ClassSet) -> Result<Self> {
        let mut c = Self::parse(&read_to_string(path)?, &path.display().to_string(), classes)?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.train_data = c.train_data.map(|p| base.join(p));
        c.val_data = c.val_data.map(|p| base.join(p));
        Ok(c)
    }
}

/// The `train_data` and `val_data` entries of a config file, resolved
/// against its directory, without parsing the rest.
pub fn data_paths(path: &Path) -> Result<(PathBuf, PathBuf)> {
    let source = path.display().to_string();
    let kv = KeyValues::parse(&source, &read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let get = |key: &str| {
        kv.raw(key)
            .map(|p| base.join(p))
            .ok_or_else(|| Error::Config(format!("{source}: missing `{key}`")))
    };
    Ok((get("train_data")?, get("val_data")?))
}
