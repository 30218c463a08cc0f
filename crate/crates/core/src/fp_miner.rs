//! False-positive mining: run a frozen detector over the original training
//! scenes and collect every confident prediction whose IoU with all
//! ground-truth boxes is exactly zero.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::{ClassSet, ObjectLabel, PointCloud, Scene};
use crate::error::{Error, Result};
use crate::geometry::{max_iou_with_gt, points_in_box, Box3D};
use crate::sample_db::{Provenance, Sample, SampleDatabase, SampleKind, DEFAULT_MIN_POINTS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub bbox: Box3D,
    pub class_id: usize,
    /// Confidence in `[0, 1]`.
    pub score: f64,
}

/// A 3D detector. Implementations must be pure with respect to their own
/// parameters: the same cloud always yields the same predictions.
pub trait Detector: Sync {
    /// Short whitespace-free identifier recorded in database provenance.
    fn id(&self) -> &str;

    /// Predictions for one cloud. `scene_id` is informational; detectors
    /// must not use it to look up annotations.
    fn detect(&self, scene_id: &str, cloud: &PointCloud) -> std::result::Result<Vec<Prediction>, String>;
}

/// True iff the prediction overlaps no ground-truth box at all, whatever the
/// class.
pub fn is_false_positive(pred: &Prediction, gt_labels: &[ObjectLabel]) -> bool {
    max_iou_with_gt(&pred.bbox, gt_labels.iter().map(|l| &l.bbox)) == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    /// Predictions below this score are ignored.
    pub score_threshold: f64,
    pub min_points: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.1,
            min_points: DEFAULT_MIN_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MiningReport {
    pub generation: u32,
    pub epoch: Option<u32>,
    pub scenes: usize,
    /// Total points across the mined scenes; lets a reader confirm the pass
    /// ran on un-augmented clouds.
    pub scene_points: usize,
    pub predictions: usize,
    /// Predictions at or above the score threshold.
    pub considered: usize,
    pub false_positives: usize,
    /// False positives dropped because their crop had too few points.
    pub skipped_below_min_points: usize,
    /// Stored samples per class.
    pub per_class: Vec<usize>,
}

impl MiningReport {
    pub fn to_text(&self, classes: &ClassSet) -> String {
        let mut out = String::new();
        writeln!(out, "generation {}", self.generation).unwrap();
        match self.epoch {
            Some(e) => writeln!(out, "epoch {e}").unwrap(),
            None => writeln!(out, "epoch -").unwrap(),
        }
        writeln!(out, "scenes {}", self.scenes).unwrap();
        writeln!(out, "scene_points {}", self.scene_points).unwrap();
        writeln!(out, "predictions {}", self.predictions).unwrap();
        writeln!(out, "considered {}", self.considered).unwrap();
        writeln!(out, "false_positives {}", self.false_positives).unwrap();
        writeln!(out, "skipped_below_min_points {}", self.skipped_below_min_points).unwrap();
        for (class_id, n) in self.per_class.iter().enumerate() {
            writeln!(out, "fp_samples.{} {n}", classes.name(class_id)).unwrap();
        }
        out
    }
}

struct SceneHarvest {
    samples: Vec<Sample>,
    predictions: usize,
    considered: usize,
    false_positives: usize,
    skipped: usize,
}

fn mine_scene(
    detector: &dyn Detector,
    scene: &Scene,
    config: &MiningConfig,
    generation: u32,
    num_classes: usize,
) -> Result<SceneHarvest> {
    let preds = detector
        .detect(&scene.scene_id, &scene.cloud)
        .map_err(|message| Error::Mining {
            scene_id: scene.scene_id.clone(),
            message,
        })?;
    let mut harvest = SceneHarvest {
        samples: Vec::new(),
        predictions: preds.len(),
        considered: 0,
        false_positives: 0,
        skipped: 0,
    };
    for (idx, pred) in preds.iter().enumerate() {
        if pred.class_id >= num_classes || !(0.0..=1.0).contains(&pred.score) {
            return Err(Error::Mining {
                scene_id: scene.scene_id.clone(),
                message: format!("prediction {idx} has class {} / score {}", pred.class_id, pred.score),
            });
        }
        if pred.score < config.score_threshold {
            continue;
        }
        harvest.considered += 1;
        if !is_false_positive(pred, &scene.labels) {
            continue;
        }
        harvest.false_positives += 1;
        let inside = points_in_box(&scene.cloud, &pred.bbox);
        if inside.len() < config.min_points.max(1) {
            harvest.skipped += 1;
            continue;
        }
        harvest.samples.push(Sample {
            id: format!("fp_g{generation:03}_{}_{idx:03}", scene.scene_id),
            class_id: pred.class_id,
            bbox: pred.bbox,
            points: scene.cloud.select(&inside),
            origin_scene_id: scene.scene_id.clone(),
            kind: SampleKind::Fp,
        });
    }
    Ok(harvest)
}

/// Build a fresh false-positive database from scratch.
///
/// The new database starts empty: nothing from `previous` is carried over
/// except its generation number, which is incremented. Scenes are mined in
/// parallel and merged in input order. Any detector failure aborts the pass.
pub fn update_fp_database(
    detector: &dyn Detector,
    scenes: &[Scene],
    classes: &ClassSet,
    config: &MiningConfig,
    previous: Option<&SampleDatabase>,
    epoch: Option<u32>,
) -> Result<(SampleDatabase, MiningReport)> {
    let generation = previous.map_or(0, SampleDatabase::generation) + 1;
    let harvests = scenes
        .par_iter()
        .map(|scene| mine_scene(detector, scene, config, generation, classes.len()))
        .collect::<Result<Vec<_>>>()?;

    let mut report = MiningReport {
        generation,
        epoch,
        scenes: scenes.len(),
        scene_points: scenes.iter().map(|s| s.cloud.len()).sum(),
        ..MiningReport::default()
    };
    let mut samples = Vec::new();
    for h in harvests {
        report.predictions += h.predictions;
        report.considered += h.considered;
        report.false_positives += h.false_positives;
        report.skipped_below_min_points += h.skipped;
        samples.extend(h.samples);
    }
    let provenance = Provenance {
        detector: detector.id().to_string(),
        epoch,
    };
    let db = SampleDatabase::from_samples(classes.clone(), samples, generation, provenance)?;
    report.per_class = db.per_class_counts();
    Ok((db, report))
}
