//! Training loop: GT-sampling warmup, FP database initialization, periodic
//! reset-and-rebuild, per-epoch validation, and the mode comparison.

mod config;
mod modes;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use config::{data_paths, default_fp_init_epoch, default_fp_update_interval, HarnessConfig};
pub use modes::{Flags, ModeRegistry, SamplingMode, FP_ONLY, GT_AND_FP, GT_ONLY, NONE};

use crate::augmentor::augment_scene;
use crate::dataset::{ClassSet, Scene};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalResult};
use crate::fp_miner::{update_fp_database, MiningReport};
use crate::fsutil::atomic_write;
use crate::rng::stream;
use crate::sample_db::{build_gt_database, SampleDatabase, SampleKind};
use crate::toy_detector::{build_examples, ToyModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean loss over the training steps taken this epoch.
    pub loss: f64,
    /// Zero-IoU false positives on the validation split, per class.
    pub fp_count: Vec<usize>,
    /// Validation AP per class; `None` where the split has no objects.
    pub ap: Vec<Option<f64>>,
    /// Generation of the FP database in use, 0 if none.
    pub fp_generation: u32,
    pub trace_entries: usize,
    pub gt_placed: usize,
    pub fp_placed: usize,
    pub examples: usize,
    pub negatives: usize,
}

impl EpochRecord {
    pub fn total_fp(&self) -> usize {
        self.fp_count.iter().sum()
    }

    pub fn mean_ap(&self) -> Option<f64> {
        let aps: Vec<f64> = self.ap.iter().flatten().copied().collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// One FP database build.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub report: MiningReport,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub mode: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_eval: EvalResult,
    pub generations: Vec<GenerationRecord>,
    pub final_params: ToyModelParams,
}

fn fmt_ap(ap: Option<f64>) -> String {
    ap.map_or_else(|| "nan".to_string(), |a| a.to_string())
}

impl RunMetrics {
    pub fn final_epoch(&self) -> &EpochRecord {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn fp_series(&self) -> Vec<usize> {
        self.epochs.iter().map(EpochRecord::total_fp).collect()
    }

    pub fn metrics_csv(&self, classes: &ClassSet) -> String {
        let mut out = String::from("epoch,loss");
        for n in classes.names() {
            write!(out, ",fp_count_{n}").unwrap();
        }
        for n in classes.names() {
            write!(out, ",ap_{n}").unwrap();
        }
        out.push('\n');
        for r in &self.epochs {
            write!(out, "{},{}", r.epoch, r.loss).unwrap();
            for n in &r.fp_count {
                write!(out, ",{n}").unwrap();
            }
            for ap in &r.ap {
                write!(out, ",{}", fmt_ap(*ap)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn augmentation_csv(&self) -> String {
        let mut out = String::from("epoch,fp_generation,trace_entries,gt_placed,fp_placed,examples,negatives\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.fp_generation, r.trace_entries, r.gt_placed, r.fp_placed, r.examples, r.negatives
            )
            .unwrap();
        }
        out
    }

    /// `metrics.csv`, `augmentation.csv`, `final_eval.csv`, `final.ckpt` and
    /// one `mining/gen_NNN.txt` per FP database build.
    pub fn write(&self, dir: &Path, classes: &ClassSet) -> Result<()> {
        atomic_write(&dir.join("metrics.csv"), self.metrics_csv(classes).as_bytes())?;
        atomic_write(&dir.join("augmentation.csv"), self.augmentation_csv().as_bytes())?;
        atomic_write(&dir.join("final_eval.csv"), self.final_eval.to_csv(classes).as_bytes())?;
        self.final_params.save(classes, &dir.join("final.ckpt"))?;
        for g in &self.generations {
            let path = dir.join("mining").join(format!("gen_{:03}.txt", g.report.generation));
            atomic_write(&path, g.report.to_text(classes).as_bytes())?;
        }
        Ok(())
    }
}

fn check_disjoint(train: &[Scene], val: &[Scene]) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|s| s.scene_id.as_str()).collect();
    match val.iter().find(|s| ids.contains(s.scene_id.as_str())) {
        Some(s) => Err(Error::Config(format!("scene `{}` is in both train and val", s.scene_id))),
        None => Ok(()),
    }
}

/// Train the toy detector under `config.mode` and record per-epoch metrics.
///
/// At the start of each rebuild epoch (FP modes only) a fresh FP database is
/// mined from the un-augmented training scenes with the current parameters.
/// Scenes are then augmented and turned into examples in parallel, and the
/// SGD steps run sequentially in a seeded shuffle order.
pub fn run_training(train: &[Scene], val: &[Scene], classes: &ClassSet, config: &HarnessConfig) -> Result<RunMetrics> {
    run_training_with(train, val, classes, config, &ModeRegistry::builtin())
}

pub fn run_training_with(
    train: &[Scene],
    val: &[Scene],
    classes: &ClassSet,
    config: &HarnessConfig,
    registry: &ModeRegistry,
) -> Result<RunMetrics> {
    config.validate(classes, registry)?;
    check_disjoint(train, val)?;
    let mode = registry.get(&config.mode)?;
    let plan = mode.effective_plan(&config.plan);

    let gt_db = if mode.uses_gt() {
        build_gt_database(train, classes, config.mining.min_points)?.0
    } else {
        SampleDatabase::empty(classes.clone())
    };
    let mut params = ToyModelParams::init(classes.len(), config.detector, train)?;
    let mut fp_db: Option<SampleDatabase> = None;
    let mut generations = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs as usize);
    let seed_text = config.seed.to_string();

    for epoch in 1..=config.epochs {
        let epoch_text = epoch.to_string();
        if mode.uses_fp() && config.is_rebuild_epoch(epoch) {
            let (db, report) = update_fp_database(&params, train, classes, &config.mining, fp_db.as_ref(), Some(epoch))
                .map_err(|e| match e {
                    Error::Mining { scene_id, message } => Error::Mining {
                        scene_id,
                        message: format!("epoch {epoch}: {message}"),
                    },
                    other => other,
                })?;
            generations.push(GenerationRecord {
                report,
                sample_ids: db.samples().map(|s| s.id.clone()).collect(),
            });
            fp_db = Some(db);
        }

        let prepared: Vec<_> = train
            .par_iter()
            .map(|scene| {
                let mut rng = stream(config.seed, &["augment", &scene.scene_id, &epoch_text]);
                let aug = augment_scene(scene, &gt_db, fp_db.as_ref(), &plan, &mut rng);
                let examples = build_examples(&aug.cloud, &aug.labels, classes.len(), &params.config);
                (examples, aug.trace)
            })
            .collect();

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(config.seed, &["shuffle", &seed_text, &epoch_text]));

        let mut record = EpochRecord {
            epoch,
            loss: 0.0,
            fp_count: Vec::new(),
            ap: Vec::new(),
            fp_generation: fp_db.as_ref().map_or(0, SampleDatabase::generation),
            trace_entries: 0,
            gt_placed: 0,
            fp_placed: 0,
            examples: 0,
            negatives: 0,
        };
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for &i in &order {
            let (examples, trace) = &prepared[i];
            record.trace_entries += trace.entries.len();
            record.gt_placed += trace.placed(SampleKind::Gt);
            record.fp_placed += trace.placed(SampleKind::Fp);
            record.examples += examples.len();
            record.negatives += examples.iter().filter(|e| e.is_negative()).count();
            if examples.is_empty() {
                continue;
            }
            let (next, loss) = params.step_on(examples);
            params = next;
            loss_sum += loss;
            steps += 1;
        }
        record.loss = if steps > 0 { loss_sum / steps as f64 } else { 0.0 };

        let eval = evaluate(&params, val, classes, &config.eval)?;
        record.fp_count = eval.zero_iou_fp.clone();
        record.ap = eval.per_class.iter().map(|c| c.ap).collect();
        epochs.push(record);
    }

    let final_eval = evaluate(&params, val, classes, &config.eval)?;
    Ok(RunMetrics {
        mode: config.mode.clone(),
        seed: config.seed,
        epochs,
        final_eval,
        generations,
        final_params: params,
    })
}

/// Per-mode aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: String,
    pub seeds: usize,
    pub final_map_mean: f64,
    pub final_map_spread: f64,
    pub final_fp_mean: f64,
    pub final_fp_spread: f64,
    pub trace_entries_mean: f64,
    /// Seed-mean total FP count per epoch.
    pub fp_series_mean: Vec<f64>,
    pub fp_series_spread: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    /// Mode-major, then seed, in input order.
    pub runs: Vec<RunMetrics>,
    pub summaries: Vec<ModeSummary>,
}

/// Mean and population standard deviation.
fn mean_spread(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Comparison {
    pub fn run(&self, mode: &str, seed: u64) -> Option<&RunMetrics> {
        self.runs.iter().find(|r| r.mode == mode && r.seed == seed)
    }

    pub fn to_csv(&self) -> String {
        let epochs = self.summaries.first().map_or(0, |s| s.fp_series_mean.len());
        let mut out = String::from(
            "mode,seeds,final_map_mean,final_map_spread,final_fp_mean,final_fp_spread,trace_entries_mean",
        );
        for e in 1..=epochs {
            write!(out, ",fp_e{e}_mean,fp_e{e}_spread").unwrap();
        }
        out.push('\n');
        for s in &self.summaries {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                s.mode,
                s.seeds,
                s.final_map_mean,
                s.final_map_spread,
                s.final_fp_mean,
                s.final_fp_spread,
                s.trace_entries_mean
            )
            .unwrap();
            for (m, sp) in s.fp_series_mean.iter().zip(&s.fp_series_spread) {
                write!(out, ",{m},{sp}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `comparison.csv` plus one run directory per (mode, seed).
    pub fn write(&self, dir: &Path, classes: &ClassSet) -> Result<()> {
        atomic_write(&dir.join("comparison.csv"), self.to_csv().as_bytes())?;
        for r in &self.runs {
            r.write(&dir.join("runs").join(format!("{}_seed{}", r.mode, r.seed)), classes)?;
        }
        Ok(())
    }
}

/// Run every registered mode for every seed with otherwise identical configs.
pub fn compare_modes(
    train: &[Scene],
    val: &[Scene],
    classes: &ClassSet,
    base: &HarnessConfig,
    seeds: &[u64],
) -> Result<Comparison> {
    let registry = ModeRegistry::builtin();
    let names: Vec<String> = registry.names().iter().map(|s| s.to_string()).collect();
    compare_selected(train, val, classes, base, seeds, &names)
}

/// [`compare_modes`] restricted to the named modes.
pub fn compare_selected(
    train: &[Scene],
    val: &[Scene],
    classes: &ClassSet,
    base: &HarnessConfig,
    seeds: &[u64],
    modes: &[String],
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    let registry = ModeRegistry::builtin();
    for m in modes {
        registry.get(m)?;
    }
    let jobs: Vec<(String, u64)> = modes
        .iter()
        .flat_map(|m| seeds.iter().map(move |&s| (m.clone(), s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|(mode, seed)| {
            let mut config = base.clone();
            config.mode = mode.clone();
            config.seed = *seed;
            run_training_with(train, val, classes, &config, &registry)
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = modes
        .iter()
        .map(|mode| {
            let mine: Vec<&RunMetrics> = runs.iter().filter(|r| &r.mode == mode).collect();
            let maps: Vec<f64> = mine.iter().map(|r| r.final_epoch().mean_ap().unwrap_or(0.0)).collect();
            let fps: Vec<f64> = mine.iter().map(|r| r.final_epoch().total_fp() as f64).collect();
            let traces: Vec<f64> = mine
                .iter()
                .map(|r| r.epochs.iter().map(|e| e.trace_entries).sum::<usize>() as f64)
                .collect();
            let n_epochs = base.epochs as usize;
            let (fp_series_mean, fp_series_spread) = (0..n_epochs)
                .map(|e| {
                    let vals: Vec<f64> = mine.iter().map(|r| r.epochs[e].total_fp() as f64).collect();
                    mean_spread(&vals)
                })
                .unzip();
            let (final_map_mean, final_map_spread) = mean_spread(&maps);
            let (final_fp_mean, final_fp_spread) = mean_spread(&fps);
            ModeSummary {
                mode: mode.clone(),
                seeds: mine.len(),
                final_map_mean,
                final_map_spread,
                final_fp_mean,
                final_fp_spread,
                trace_entries_mean: mean_spread(&traces).0,
                fp_series_mean,
                fp_series_spread,
            }
        })
        .collect();
    Ok(Comparison { runs, summaries })
}
