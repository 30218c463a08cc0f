//! Joint ground-truth and false-positive sample insertion.
//!
//! For each class in class-set order, `gt_count[c]` samples are drawn from
//! the GT database and then `fp_count[c]` from the FP database. Every draw is
//! placed at its stored pose only if its footprint overlaps no box already in
//! the scene (original labels, earlier GT placements and earlier FP
//! placements alike). GT placements add their label; FP placements add points
//! only.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::dataset::{ClassSet, ObjectLabel, PointCloud, Scene};
use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::geometry::{bev_intersection_area, point_in_box, Box3D};
use crate::keyval::KeyValues;
use crate::rng::Rng;
use crate::sample_db::{Sample, SampleDatabase, SampleKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationPlan {
    /// GT samples to insert per class, indexed by class id.
    pub gt_count: Vec<usize>,
    /// FP samples to insert per class, indexed by class id.
    pub fp_count: Vec<usize>,
    /// Redraws allowed after a colliding draw before the slot is skipped.
    pub max_placement_retries: usize,
    /// Remove scene points inside each placed box before inserting.
    pub carve_out: bool,
}

pub(crate) const PLAN_KEYS: &[&str] = &["gt_count.*", "fp_count.*", "max_placement_retries", "carve_out"];

impl AugmentationPlan {
    pub fn zero(num_classes: usize) -> Self {
        Self {
            gt_count: vec![0; num_classes],
            fp_count: vec![0; num_classes],
            max_placement_retries: 5,
            carve_out: true,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.gt_count.len() != num_classes || self.fp_count.len() != num_classes {
            return Err(Error::Config(format!(
                "plan must give counts for exactly {num_classes} classes"
            )));
        }
        if self.max_placement_retries == 0 {
            return Err(Error::Config("max_placement_retries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.gt_count.iter().chain(&self.fp_count).all(|&n| n == 0)
    }

    /// The same plan with all GT or all FP counts zeroed.
    pub fn masked(&self, keep_gt: bool, keep_fp: bool) -> Self {
        let mut plan = self.clone();
        if !keep_gt {
            plan.gt_count.iter_mut().for_each(|n| *n = 0);
        }
        if !keep_fp {
            plan.fp_count.iter_mut().for_each(|n| *n = 0);
        }
        plan
    }

    /// Read `gt_count.<class>`, `fp_count.<class>`, `max_placement_retries`
    /// and `carve_out`. Missing classes default to zero.
    pub(crate) fn from_keyvalues(kv: &KeyValues, classes: &ClassSet) -> Result<Self> {
        let mut plan = Self::zero(classes.len());
        for (family, counts) in [("gt_count", &mut plan.gt_count), ("fp_count", &mut plan.fp_count)] {
            for (name, value) in kv.with_prefix(family) {
                let key = format!("{family}.{name}");
                let class_id = classes
                    .id(name)
                    .ok_or_else(|| Error::Config(format!("`{key}` names unknown class `{name}`")))?;
                counts[class_id] = kv.parse_value(&key, value)?;
            }
        }
        plan.max_placement_retries = kv.get_or("max_placement_retries", plan.max_placement_retries)?;
        plan.carve_out = kv.get_or("carve_out", plan.carve_out)?;
        plan.validate(classes.len())?;
        Ok(plan)
    }

    pub fn parse(text: &str, source: &str, classes: &ClassSet) -> Result<Self> {
        let kv = KeyValues::parse(source, text)?;
        kv.reject_unknown(PLAN_KEYS)?;
        Self::from_keyvalues(&kv, classes)
    }

    pub fn load(path: &Path, classes: &ClassSet) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string(), classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Placed,
    /// Every draw collided and the retry budget ran out.
    SkippedCollision,
    /// All samples of the class were already used in this scene.
    SkippedExhausted,
    /// The database has no samples for the class.
    SkippedEmptyClass,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Placed => "placed",
            Outcome::SkippedCollision => "skipped_collision",
            Outcome::SkippedExhausted => "skipped_exhausted",
            Outcome::SkippedEmptyClass => "skipped_empty_class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub kind: SampleKind,
    pub class_id: usize,
    /// The placed sample, or the last rejected one for collision skips.
    pub sample_id: Option<String>,
    pub outcome: Outcome,
    pub retries: usize,
    pub removed_points: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AugmentationTrace {
    pub entries: Vec<TraceEntry>,
}

impl AugmentationTrace {
    pub fn placed(&self, kind: SampleKind) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == kind && e.outcome == Outcome::Placed)
            .count()
    }

    /// One line per draw slot:
    /// `sample_id class kind outcome retries removed_points`.
    pub fn to_text(&self, classes: &ClassSet) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(
                out,
                "{} {} {} {} {} {}",
                e.sample_id.as_deref().unwrap_or("-"),
                classes.name(e.class_id),
                e.kind.as_str(),
                e.outcome.as_str(),
                e.retries,
                e.removed_points
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub cloud: PointCloud,
    pub labels: Vec<ObjectLabel>,
    pub trace: AugmentationTrace,
    /// Original scene points removed by carve-out.
    pub removed_points: usize,
}

struct Placement<'a> {
    occupied: Vec<Box3D>,
    used: HashSet<&'a str>,
    placed: Vec<&'a Sample>,
    removed: Vec<bool>,
    removed_total: usize,
}

/// Augment one scene. `fp_db` is absent before the first mining pass, in
/// which case FP slots are not attempted.
pub fn augment_scene(
    scene: &Scene,
    gt_db: &SampleDatabase,
    fp_db: Option<&SampleDatabase>,
    plan: &AugmentationPlan,
    rng: &mut Rng,
) -> Augmented {
    let mut state = Placement {
        occupied: scene.labels.iter().map(|l| l.bbox).collect(),
        used: HashSet::new(),
        placed: Vec::new(),
        removed: vec![false; scene.cloud.len()],
        removed_total: 0,
    };
    let mut trace = AugmentationTrace::default();
    let num_classes = plan.gt_count.len().min(plan.fp_count.len());

    for class_id in 0..num_classes {
        for (kind, db, count) in [
            (SampleKind::Gt, Some(gt_db), plan.gt_count[class_id]),
            (SampleKind::Fp, fp_db, plan.fp_count[class_id]),
        ] {
            let Some(db) = db else { continue };
            for _ in 0..count {
                let entry = draw_one(scene, db, kind, class_id, plan, rng, &mut state);
                trace.entries.push(entry);
            }
        }
    }

    let mut cloud: PointCloud = scene
        .cloud
        .points()
        .iter()
        .zip(&state.removed)
        .filter(|(_, &gone)| !gone)
        .map(|(p, _)| *p)
        .collect();
    let mut labels = scene.labels.clone();
    for sample in &state.placed {
        cloud.extend_from(&sample.points);
        if sample.kind == SampleKind::Gt {
            labels.push(ObjectLabel {
                bbox: sample.bbox,
                class_id: sample.class_id,
            });
        }
    }
    Augmented {
        cloud,
        labels,
        trace,
        removed_points: state.removed_total,
    }
}

fn draw_one<'a>(
    scene: &Scene,
    db: &'a SampleDatabase,
    kind: SampleKind,
    class_id: usize,
    plan: &AugmentationPlan,
    rng: &mut Rng,
    state: &mut Placement<'a>,
) -> TraceEntry {
    let pool = db.class_samples(class_id);
    let mut entry = TraceEntry {
        kind,
        class_id,
        sample_id: None,
        outcome: Outcome::SkippedEmptyClass,
        retries: 0,
        removed_points: 0,
    };
    if pool.is_empty() {
        return entry;
    }
    loop {
        let candidates: Vec<&Sample> = pool
            .iter()
            .filter(|s| !state.used.contains(s.id.as_str()))
            .collect();
        if candidates.is_empty() {
            entry.outcome = Outcome::SkippedExhausted;
            return entry;
        }
        let sample = candidates[rng.random_range(0..candidates.len())];
        state.used.insert(sample.id.as_str());
        entry.sample_id = Some(sample.id.clone());
        let collides = state
            .occupied
            .iter()
            .any(|b| bev_intersection_area(b, &sample.bbox) > 0.0);
        if !collides {
            if plan.carve_out {
                for (p, gone) in scene.cloud.points().iter().zip(state.removed.iter_mut()) {
                    if !*gone && point_in_box(p, &sample.bbox) {
                        *gone = true;
                        entry.removed_points += 1;
                    }
                }
                state.removed_total += entry.removed_points;
            }
            state.occupied.push(sample.bbox);
            state.placed.push(sample);
            entry.outcome = Outcome::Placed;
            return entry;
        }
        if entry.retries == plan.max_placement_retries {
            entry.outcome = Outcome::SkippedCollision;
            return entry;
        }
        entry.retries += 1;
    }
}
