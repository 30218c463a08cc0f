//! Detection evaluation: greedy score-ordered matching, AP at 40 recall
//! positions, and false-positive counts under the zero-IoU rule.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::{ClassSet, Scene};
use crate::error::{Error, Result};
use crate::fp_miner::{is_false_positive, Detector, Prediction};
use crate::geometry::{iou_3d, Box3D};

pub const R40_POSITIONS: usize = 40;

/// 0.7 for vehicles, 0.5 for everything else.
pub fn default_iou_threshold(class_name: &str) -> f64 {
    match class_name {
        "car" | "vehicle" | "van" | "truck" => 0.7,
        _ => 0.5,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// TP match threshold per class id.
    pub iou_thresholds: Vec<f64>,
    pub recall_positions: usize,
    /// Score floor for counting zero-IoU false positives. The default 0.5 is
    /// the sigmoid decision boundary: a prediction the model itself calls
    /// positive.
    pub fp_score_threshold: f64,
}

impl EvalConfig {
    pub fn for_classes(classes: &ClassSet) -> Self {
        Self {
            iou_thresholds: classes.names().iter().map(|n| default_iou_threshold(n)).collect(),
            recall_positions: R40_POSITIONS,
            fp_score_threshold: 0.5,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.iou_thresholds.len() != num_classes {
            return Err(Error::Config(format!("need {num_classes} IoU thresholds")));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.recall_positions == 0 {
            return Err(Error::Config("recall_positions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of matching one scene's predictions of one class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// For each prediction (input order), the index of the GT it claimed.
    pub matched: Vec<Option<usize>>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn score_order(a: &Prediction, b: &Prediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            let (ca, cb) = (a.bbox.center(), b.bbox.center());
            ca[0].total_cmp(&cb[0])
                .then(ca[1].total_cmp(&cb[1]))
                .then(ca[2].total_cmp(&cb[2]))
        })
}

/// Greedy matching in descending score order. Each prediction claims the
/// unclaimed GT of highest IoU (lowest index on ties) if that IoU reaches
/// `iou_threshold`. Ties in score are broken by box center, lexicographically.
pub fn match_predictions(preds: &[Prediction], gts: &[Box3D], iou_threshold: f64) -> Assignment {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| score_order(&preds[i], &preds[j]).then(i.cmp(&j)));
    let mut claimed = vec![false; gts.len()];
    let mut matched = vec![None; preds.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let iou = iou_3d(&preds[i].bbox, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
            matched[i] = Some(g);
        }
    }
    let tp = matched.iter().filter(|m| m.is_some()).count();
    Assignment {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        matched,
    }
}

/// Predictions and GT boxes of one class in one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalFrame {
    pub preds: Vec<Prediction>,
    pub gts: Vec<Box3D>,
}

/// Precision and recall at each distinct score cutoff, highest score first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub scores: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    tp: Vec<usize>,
    num_gt: usize,
}

pub fn pr_curve(frames: &[EvalFrame], iou_threshold: f64) -> PrCurve {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0;
    for frame in frames {
        num_gt += frame.gts.len();
        let a = match_predictions(&frame.preds, &frame.gts, iou_threshold);
        scored.extend(frame.preds.iter().zip(&a.matched).map(|(p, m)| (p.score, m.is_some())));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = PrCurve {
        num_gt,
        ..PrCurve::default()
    };
    let (mut tp, mut seen) = (0usize, 0usize);
    for (i, &(score, hit)) in scored.iter().enumerate() {
        seen += 1;
        tp += hit as usize;
        let last_of_tie = scored.get(i + 1).is_none_or(|next| next.0 != score);
        if last_of_tie {
            curve.scores.push(score);
            curve.tp.push(tp);
            curve.precision.push(tp as f64 / seen as f64);
            curve.recall.push(if num_gt > 0 { tp as f64 / num_gt as f64 } else { 0.0 });
        }
    }
    curve
}

/// Interpolated AP at `positions` equally spaced recall levels `k/positions`,
/// `k = 1..=positions`: each level takes the best precision among cutoffs
/// whose recall reaches it, or 0 if none does.
pub fn average_precision(frames: &[EvalFrame], iou_threshold: f64, positions: usize) -> Result<f64> {
    let curve = pr_curve(frames, iou_threshold);
    ap_from_curve(&curve, positions)
}

fn ap_from_curve(curve: &PrCurve, positions: usize) -> Result<f64> {
    if curve.num_gt == 0 {
        return Err(Error::NoGroundTruth(String::new()));
    }
    let mut total = 0.0;
    for k in 1..=positions {
        // recall >= k/positions, compared in integers
        let best = curve
            .tp
            .iter()
            .zip(&curve.precision)
            .filter(|(&tp, _)| tp * positions >= k * curve.num_gt)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / positions as f64)
}

pub fn average_precision_r40(frames: &[EvalFrame], iou_threshold: f64) -> Result<f64> {
    average_precision(frames, iou_threshold, R40_POSITIONS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    /// `None` when the class has no ground truth in the evaluated scenes.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAssignment {
    pub scene_id: String,
    pub predictions: Vec<Prediction>,
    /// Matched GT label index per prediction.
    pub matched: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_class: Vec<ClassResult>,
    /// Predictions minus matched TPs, all classes.
    pub total_fp: usize,
    /// Per predicted class: predictions at or above the FP score floor with
    /// zero IoU to every GT box.
    pub zero_iou_fp: Vec<usize>,
    pub assignments: Vec<SceneAssignment>,
}

impl EvalResult {
    /// Mean AP over classes that have ground truth.
    pub fn mean_ap(&self) -> Option<f64> {
        let aps: Vec<f64> = self.per_class.iter().filter_map(|c| c.ap).collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    pub fn to_csv(&self, classes: &ClassSet) -> String {
        let mut out = String::from("class,ap,tp,fp,fn,zero_iou_fp\n");
        for (c, r) in self.per_class.iter().enumerate() {
            let ap = r.ap.map_or("nan".to_string(), |a| a.to_string());
            let zero = self.zero_iou_fp.get(c).copied().unwrap_or(0);
            writeln!(out, "{},{ap},{},{},{},{zero}", classes.name(c), r.tp, r.fp, r.fn_).unwrap();
        }
        out
    }
}

fn detect_all(detector: &dyn Detector, scenes: &[Scene]) -> Result<Vec<Vec<Prediction>>> {
    scenes
        .par_iter()
        .map(|s| {
            detector.detect(&s.scene_id, &s.cloud).map_err(|message| Error::Mining {
                scene_id: s.scene_id.clone(),
                message,
            })
        })
        .collect()
}

/// Detect on every scene and score the result.
pub fn evaluate(detector: &dyn Detector, scenes: &[Scene], classes: &ClassSet, config: &EvalConfig) -> Result<EvalResult> {
    config.validate(classes.len())?;
    let detections = detect_all(detector, scenes)?;
    Ok(evaluate_detections(scenes, &detections, classes, config))
}

pub fn evaluate_detections(
    scenes: &[Scene],
    detections: &[Vec<Prediction>],
    classes: &ClassSet,
    config: &EvalConfig,
) -> EvalResult {
    let n = classes.len();
    let mut frames: Vec<Vec<EvalFrame>> = vec![Vec::with_capacity(scenes.len()); n];
    let mut assignments = Vec::with_capacity(scenes.len());
    let mut zero_iou_fp = vec![0; n];
    for (scene, preds) in scenes.iter().zip(detections) {
        let mut matched = vec![None; preds.len()];
        for (c, class_frames) in frames.iter_mut().enumerate() {
            let pred_idx: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].class_id == c).collect();
            let gt_idx: Vec<usize> = (0..scene.labels.len()).filter(|&g| scene.labels[g].class_id == c).collect();
            let frame = EvalFrame {
                preds: pred_idx.iter().map(|&i| preds[i]).collect(),
                gts: gt_idx.iter().map(|&g| scene.labels[g].bbox).collect(),
            };
            let a = match_predictions(&frame.preds, &frame.gts, config.iou_thresholds[c]);
            for (k, m) in a.matched.iter().enumerate() {
                matched[pred_idx[k]] = m.map(|g| gt_idx[g]);
            }
            class_frames.push(frame);
        }
        for p in preds {
            if p.class_id < n && p.score >= config.fp_score_threshold && is_false_positive(p, &scene.labels) {
                zero_iou_fp[p.class_id] += 1;
            }
        }
        assignments.push(SceneAssignment {
            scene_id: scene.scene_id.clone(),
            predictions: preds.clone(),
            matched,
        });
    }
    let mut total_fp = 0;
    let per_class = frames
        .iter()
        .enumerate()
        .map(|(c, class_frames)| {
            let thr = config.iou_thresholds[c];
            let curve = pr_curve(class_frames, thr);
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for f in class_frames {
                let a = match_predictions(&f.preds, &f.gts, thr);
                tp += a.tp;
                fp += a.fp;
                fn_ += a.fn_;
            }
            total_fp += fp;
            ClassResult {
                ap: ap_from_curve(&curve, config.recall_positions).ok(),
                tp,
                fp,
                fn_,
                curve,
            }
        })
        .collect();
    EvalResult {
        per_class,
        total_fp,
        zero_iou_fp,
        assignments,
    }
}

/// Per predicted class, predictions scoring at least `score_threshold` whose
/// IoU with every GT box of their scene is zero.
pub fn count_false_positives(
    detector: &dyn Detector,
    scenes: &[Scene],
    num_classes: usize,
    score_threshold: f64,
) -> Result<Vec<usize>> {
    let detections = detect_all(detector, scenes)?;
    let mut counts = vec![0; num_classes];
    for (scene, preds) in scenes.iter().zip(&detections) {
        for p in preds {
            if p.score >= score_threshold && p.class_id < num_classes && is_false_positive(p, &scene.labels) {
                counts[p.class_id] += 1;
            }
        }
    }
    Ok(counts)
}

/// Zero-IoU false positives binned by score into `bins` equal bins over
/// `[0, 1]`; a score of exactly 1 falls in the last bin.
pub fn score_histogram_of_fps(detector: &dyn Detector, scenes: &[Scene], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let detections = detect_all(detector, scenes)?;
    let mut hist = vec![0; bins];
    for (scene, preds) in scenes.iter().zip(&detections) {
        for p in preds.iter().filter(|p| is_false_positive(p, &scene.labels)) {
            let bin = ((p.score * bins as f64).floor() as usize).min(bins - 1);
            hist[bin] += 1;
        }
    }
    Ok(hist)
}
