//! A small trainable detector: BEV occupancy-grid clustering for proposals,
//! six handcrafted crop features, and one logistic scorer per class.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{ClassSet, ObjectLabel, PointCloud, Scene};
use crate::error::{Error, Result};
use crate::fp_miner::{Detector, Prediction};
use crate::fsutil::{atomic_write, read_to_string};
use crate::geometry::{iou_3d, Box3D, Dims};

pub const NUM_FEATURES: usize = 6;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "log_count",
    "footprint_area",
    "height_extent",
    "mean_intensity",
    "density",
    "z_centroid_offset",
];

/// Slack added around member extents so every member lies inside its box.
const PROPOSAL_PAD: f64 = 1e-4;

pub type Features = [f64; NUM_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box3D,
    /// Index of the grid component that produced the proposal.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    /// BEV occupancy cell size, meters.
    pub grid_cell: f64,
    /// Minimum proposal extent along each axis, meters.
    pub min_extent: f64,
    pub emit_threshold: f64,
    /// IoU with a label of class `c` at which a proposal is a positive for `c`.
    pub match_threshold: f64,
    pub learning_rate: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            grid_cell: 0.3,
            min_extent: 0.1,
            emit_threshold: 0.1,
            match_threshold: 0.3,
            learning_rate: 0.1,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.grid_cell) || !pos(self.min_extent) || !pos(self.learning_rate) {
            return Err(Error::Config(
                "grid_cell, min_extent and learning_rate must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.emit_threshold) || !(self.match_threshold > 0.0 && self.match_threshold <= 1.0) {
            return Err(Error::Config(
                "emit_threshold must be in [0,1] and match_threshold in (0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Point indices bucketed by BEV grid cell.
struct BevGrid {
    cell: f64,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl BevGrid {
    fn new(cloud: &PointCloud, cell: f64) -> Self {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in cloud.points().iter().enumerate() {
            cells.entry(Self::key(p.x as f64, p.y as f64, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(x: f64, y: f64, cell: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    /// Indices of points whose cell overlaps the box's axis-aligned footprint
    /// bounds, ascending.
    fn candidates(&self, b: &Box3D) -> Vec<usize> {
        let corners = crate::geometry::bev_corners(b);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for [x, y] in corners {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let (kx0, ky0) = Self::key(x0, y0, self.cell);
        let (kx1, ky1) = Self::key(x1, y1, self.cell);
        let mut out = Vec::new();
        for kx in kx0 - 1..=kx1 + 1 {
            for (_, idx) in self.cells.range((kx, ky0 - 1)..=(kx, ky1 + 1)) {
                out.extend_from_slice(idx);
            }
        }
        out.sort_unstable();
        out
    }
}

/// 4-connected components of occupied BEV cells, one proposal each, ordered
/// by each component's smallest cell.
pub fn generate_proposals(cloud: &PointCloud, config: &ToyConfig) -> Vec<Proposal> {
    proposals_with_grid(cloud, config).0
}

fn proposals_with_grid(cloud: &PointCloud, config: &ToyConfig) -> (Vec<Proposal>, BevGrid) {
    let grid = BevGrid::new(cloud, config.grid_cell);
    let mut visited: BTreeMap<(i64, i64), bool> = grid.cells.keys().map(|k| (*k, false)).collect();
    let mut proposals = Vec::new();
    let keys: Vec<(i64, i64)> = grid.cells.keys().copied().collect();
    for start in keys {
        if visited[&start] {
            continue;
        }
        visited.insert(start, true);
        let mut queue = VecDeque::from([start]);
        let mut lo = [f64::MAX; 3];
        let mut hi = [f64::MIN; 3];
        while let Some((cx, cy)) = queue.pop_front() {
            for &i in &grid.cells[&(cx, cy)] {
                let pos = cloud.points()[i].position();
                for k in 0..3 {
                    lo[k] = lo[k].min(pos[k]);
                    hi[k] = hi[k].max(pos[k]);
                }
            }
            for n in [(cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)] {
                if let Some(seen) = visited.get_mut(&n) {
                    if !*seen {
                        *seen = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        let half = |k: usize| ((hi[k] - lo[k]) / 2.0).max(config.min_extent / 2.0) + PROPOSAL_PAD;
        let center = [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2.0);
        let dims = Dims {
            length: 2.0 * half(0),
            width: 2.0 * half(1),
            height: 2.0 * half(2),
        };
        let bbox = Box3D::new(center, dims, 0.0).expect("finite cluster extents");
        proposals.push(Proposal {
            bbox,
            source: proposals.len(),
        });
    }
    (proposals, grid)
}

fn features_of<I: Iterator<Item = usize>>(cloud: &PointCloud, b: &Box3D, indices: I) -> Features {
    let mut n = 0usize;
    let mut z_lo = f64::MAX;
    let mut z_hi = f64::MIN;
    let mut z_sum = 0.0;
    let mut i_sum = 0.0;
    for i in indices {
        let p = cloud.points()[i];
        if !b.contains(p.position()) {
            continue;
        }
        n += 1;
        let z = p.z as f64;
        z_lo = z_lo.min(z);
        z_hi = z_hi.max(z);
        z_sum += z;
        i_sum += p.intensity as f64;
    }
    if n == 0 {
        return [0.0; NUM_FEATURES];
    }
    let d = b.dims();
    let area = d.length * d.width;
    let nf = n as f64;
    [
        (1.0 + nf).ln(),
        area,
        z_hi - z_lo,
        i_sum / nf,
        nf / area,
        z_sum / nf - b.z_range().0,
    ]
}

/// Features of the points of `cloud` inside `b`, in [`FEATURE_NAMES`] order.
/// An empty crop gives the all-zero vector.
pub fn extract_features(cloud: &PointCloud, b: &Box3D) -> Features {
    features_of(cloud, b, 0..cloud.len())
}

/// Training example: normalized-later features and per-class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    pub targets: Vec<bool>,
}

impl Example {
    pub fn is_negative(&self) -> bool {
        self.targets.iter().all(|t| !t)
    }
}

/// Label each proposal of `cloud` against `labels`.
pub fn build_examples(cloud: &PointCloud, labels: &[ObjectLabel], num_classes: usize, config: &ToyConfig) -> Vec<Example> {
    let (proposals, grid) = proposals_with_grid(cloud, config);
    proposals
        .iter()
        .map(|p| {
            let features = features_of(cloud, &p.bbox, grid.candidates(&p.bbox).into_iter());
            let mut targets = vec![false; num_classes];
            for l in labels {
                if l.class_id < num_classes && !targets[l.class_id] && iou_3d(&p.bbox, &l.bbox) >= config.match_threshold {
                    targets[l.class_id] = true;
                }
            }
            Example { features, targets }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub config: ToyConfig,
    /// One weight vector per class.
    pub weights: Vec<Features>,
    pub bias: Vec<f64>,
    pub feature_mean: Features,
    pub feature_scale: Features,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Gradient with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Features>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub examples: usize,
    pub negatives: usize,
}

impl ToyModelParams {
    /// Zero weights, with feature normalization fit to the proposals of `scenes`.
    pub fn init(num_classes: usize, config: ToyConfig, scenes: &[Scene]) -> Result<Self> {
        config.validate()?;
        let mut sum = [0.0; NUM_FEATURES];
        let mut sq = [0.0; NUM_FEATURES];
        let mut n = 0usize;
        for scene in scenes {
            for ex in build_examples(&scene.cloud, &[], 0, &config) {
                for k in 0..NUM_FEATURES {
                    sum[k] += ex.features[k];
                    sq[k] += ex.features[k] * ex.features[k];
                }
                n += 1;
            }
        }
        let mut mean = [0.0; NUM_FEATURES];
        let mut scale = [1.0; NUM_FEATURES];
        if n > 0 {
            for k in 0..NUM_FEATURES {
                mean[k] = sum[k] / n as f64;
                let var = (sq[k] / n as f64 - mean[k] * mean[k]).max(0.0);
                scale[k] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(Self {
            config,
            weights: vec![[0.0; NUM_FEATURES]; num_classes],
            bias: vec![0.0; num_classes],
            feature_mean: mean,
            feature_scale: scale,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn normalized(&self, f: &Features) -> Features {
        let mut out = [0.0; NUM_FEATURES];
        for k in 0..NUM_FEATURES {
            out[k] = (f[k] - self.feature_mean[k]) / self.feature_scale[k];
        }
        out
    }

    fn logit(&self, class_id: usize, x: &Features) -> f64 {
        self.bias[class_id] + self.weights[class_id].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Per-class sigmoid scores for raw features.
    pub fn scores(&self, f: &Features) -> Vec<f64> {
        let x = self.normalized(f);
        (0..self.num_classes()).map(|c| sigmoid(self.logit(c, &x))).collect()
    }

    /// Mean per-class logistic loss over `examples` and its gradient.
    pub fn loss_and_gradient(&self, examples: &[Example]) -> (f64, Gradient) {
        let c_n = self.num_classes();
        let mut grad = Gradient {
            weights: vec![[0.0; NUM_FEATURES]; c_n],
            bias: vec![0.0; c_n],
        };
        if examples.is_empty() || c_n == 0 {
            return (0.0, grad);
        }
        let norm = 1.0 / (examples.len() * c_n) as f64;
        let mut loss = 0.0;
        for ex in examples {
            let x = self.normalized(&ex.features);
            for c in 0..c_n {
                let z = self.logit(c, &x);
                let y = if ex.targets[c] { 1.0 } else { 0.0 };
                loss += softplus(z) - y * z;
                let dz = (sigmoid(z) - y) * norm;
                grad.bias[c] += dz;
                for k in 0..NUM_FEATURES {
                    grad.weights[c][k] += dz * x[k];
                }
            }
        }
        (loss * norm, grad)
    }

    /// One gradient-descent step on prebuilt examples.
    pub fn step_on(&self, examples: &[Example]) -> (Self, f64) {
        let (loss, grad) = self.loss_and_gradient(examples);
        let mut next = self.clone();
        let lr = self.config.learning_rate;
        for c in 0..self.num_classes() {
            next.bias[c] -= lr * grad.bias[c];
            for k in 0..NUM_FEATURES {
                next.weights[c][k] -= lr * grad.weights[c][k];
            }
        }
        (next, loss)
    }

    /// Propose on `cloud`, label proposals against `labels`, and take one step.
    pub fn train_step(&self, cloud: &PointCloud, labels: &[ObjectLabel]) -> (Self, f64, StepStats) {
        let examples = build_examples(cloud, labels, self.num_classes(), &self.config);
        let stats = StepStats {
            examples: examples.len(),
            negatives: examples.iter().filter(|e| e.is_negative()).count(),
        };
        if examples.is_empty() {
            return (self.clone(), 0.0, stats);
        }
        let (next, loss) = self.step_on(&examples);
        (next, loss, stats)
    }

    pub fn predict(&self, cloud: &PointCloud) -> Vec<Prediction> {
        let (proposals, grid) = proposals_with_grid(cloud, &self.config);
        let mut out = Vec::new();
        for p in proposals {
            let f = features_of(cloud, &p.bbox, grid.candidates(&p.bbox).into_iter());
            let scores = self.scores(&f);
            let (class_id, score) = scores
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::MIN), |best, (c, s)| if s > best.1 { (c, s) } else { best });
            if !scores.is_empty() && score >= self.config.emit_threshold {
                out.push(Prediction {
                    bbox: p.bbox,
                    class_id,
                    score,
                });
            }
        }
        out
    }

    pub fn to_text(&self, classes: &ClassSet) -> String {
        let mut out = String::from("fpsampler-toy-detector v1\n");
        let c = &self.config;
        writeln!(out, "grid_cell {}", c.grid_cell).unwrap();
        writeln!(out, "min_extent {}", c.min_extent).unwrap();
        writeln!(out, "emit_threshold {}", c.emit_threshold).unwrap();
        writeln!(out, "match_threshold {}", c.match_threshold).unwrap();
        writeln!(out, "learning_rate {}", c.learning_rate).unwrap();
        let row = |v: &Features| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "feature_mean {}", row(&self.feature_mean)).unwrap();
        writeln!(out, "feature_scale {}", row(&self.feature_scale)).unwrap();
        for (class_id, w) in self.weights.iter().enumerate() {
            writeln!(out, "class {} {} {}", classes.name(class_id), self.bias[class_id], row(w)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, classes: &ClassSet, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, "fpsampler-toy-detector v1")) => {}
            _ => return Err(Error::format(source, "not a toy-detector checkpoint")),
        }
        let mut config = ToyConfig::default();
        let mut mean = None;
        let mut scale = None;
        let mut weights = vec![None; classes.len()];
        let mut bias = vec![0.0; classes.len()];
        for (idx, line) in lines {
            let loc = format!("{source}:{}", idx + 1);
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(&loc, format!("bad number `{s}`")))
            };
            let vector = |vals: &[&str]| -> Result<Features> {
                if vals.len() != NUM_FEATURES {
                    return Err(Error::format(&loc, format!("expected {NUM_FEATURES} values")));
                }
                let mut v = [0.0; NUM_FEATURES];
                for (slot, s) in v.iter_mut().zip(vals) {
                    *slot = num(s)?;
                }
                Ok(v)
            };
            match fields.as_slice() {
                ["grid_cell", v] => config.grid_cell = num(v)?,
                ["min_extent", v] => config.min_extent = num(v)?,
                ["emit_threshold", v] => config.emit_threshold = num(v)?,
                ["match_threshold", v] => config.match_threshold = num(v)?,
                ["learning_rate", v] => config.learning_rate = num(v)?,
                ["feature_mean", rest @ ..] => mean = Some(vector(rest)?),
                ["feature_scale", rest @ ..] => scale = Some(vector(rest)?),
                ["class", name, b, rest @ ..] => {
                    let c = classes
                        .id(name)
                        .ok_or_else(|| Error::format(&loc, format!("unknown class `{name}`")))?;
                    bias[c] = num(b)?;
                    weights[c] = Some(vector(rest)?);
                }
                _ => return Err(Error::format(&loc, "unrecognized checkpoint line")),
            }
        }
        let weights = weights
            .into_iter()
            .enumerate()
            .map(|(c, w)| w.ok_or_else(|| Error::format(source, format!("missing weights for `{}`", classes.name(c)))))
            .collect::<Result<Vec<_>>>()?;
        config.validate().map_err(|e| Error::format(source, e.to_string()))?;
        let feature_scale = scale.ok_or_else(|| Error::format(source, "missing feature_scale"))?;
        if feature_scale.contains(&0.0) {
            return Err(Error::format(source, "feature_scale must be nonzero"));
        }
        Ok(Self {
            config,
            weights,
            bias,
            feature_mean: mean.ok_or_else(|| Error::format(source, "missing feature_mean"))?,
            feature_scale,
        })
    }

    pub fn save(&self, classes: &ClassSet, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text(classes).as_bytes())
    }

    pub fn load(path: &Path, classes: &ClassSet) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, classes, &path.display().to_string())
    }
}

impl Detector for ToyModelParams {
    fn id(&self) -> &str {
        "toy-linear"
    }

    fn detect(&self, _scene_id: &str, cloud: &PointCloud) -> std::result::Result<Vec<Prediction>, String> {
        Ok(self.predict(cloud))
    }
}
