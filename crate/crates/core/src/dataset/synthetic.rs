use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{validate_id, ClassSet, ObjectLabel, Point, PointCloud, Scene};
use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::geometry::{bev_intersection_area, Box3D, Dims};
use crate::keyval::{parse_range, KeyValues};
use crate::rng::{stream, Rng};

/// Size, reflectance and per-scene count of one object class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub name: String,
    /// Mean length, width, height.
    pub dims: [f64; 3],
    /// Half-width of the uniform jitter applied to each dimension.
    pub dims_jitter: [f64; 3],
    pub intensity: f64,
    /// Inclusive range of objects of this class per scene.
    pub count: (usize, usize),
}

impl ClassProfile {
    fn builtin(name: &str) -> Option<Self> {
        let (dims, dims_jitter, intensity, count) = match name {
            "car" => ([3.9, 1.6, 1.55], [0.3, 0.1, 0.1], 0.6, (1, 3)),
            "pedestrian" => ([0.8, 0.6, 1.75], [0.1, 0.1, 0.1], 0.35, (1, 3)),
            "cyclist" => ([1.76, 0.6, 1.7], [0.15, 0.1, 0.1], 0.45, (0, 2)),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            dims,
            dims_jitter,
            intensity,
            count,
        })
    }
}

/// Parameters of the synthetic scene generator.
///
/// Besides labeled objects, every scene holds unlabeled distractors (posts,
/// shrubs, signs) whose shape statistics overlap the small classes, and
/// isolated ground clutter returns. Distractors are what a detector trained
/// on these scenes tends to report as false positives.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub scenes: usize,
    pub id_prefix: String,
    /// Side of the square scene region centered on the sensor, meters.
    pub extent: f64,
    pub classes: Vec<ClassProfile>,
    pub distractors: (usize, usize),
    pub distractor_dims_min: [f64; 3],
    pub distractor_dims_max: [f64; 3],
    pub distractor_intensity: (f64, f64),
    /// Range of the multiplier on `point_density` for distractors.
    pub distractor_density: (f64, f64),
    pub clutter_points: usize,
    /// Object returns per square meter of footprint.
    pub point_density: f64,
    pub min_object_points: usize,
    pub intensity_noise: f64,
    /// Minimum free space between any two footprints, meters.
    pub min_gap: f64,
    /// Uniform yaw perturbation half-width on top of the 0 / π/2 headings.
    pub yaw_jitter: f64,
    pub max_retries: usize,
}

impl DatasetSpec {
    /// The desk-scale reference configuration: car, pedestrian and cyclist
    /// with four to eight distractors per 40 m scene.
    pub fn reference(scenes: usize, id_prefix: &str) -> Self {
        let classes = ["car", "pedestrian", "cyclist"]
            .iter()
            .map(|n| ClassProfile::builtin(n).unwrap())
            .collect();
        Self {
            scenes,
            id_prefix: id_prefix.to_string(),
            extent: 40.0,
            classes,
            distractors: (4, 8),
            distractor_dims_min: [0.4, 0.4, 1.0],
            distractor_dims_max: [1.6, 0.9, 2.2],
            distractor_intensity: (0.2, 0.6),
            distractor_density: (0.6, 1.5),
            clutter_points: 100,
            point_density: 50.0,
            min_object_points: 8,
            intensity_noise: 0.05,
            min_gap: 1.0,
            yaw_jitter: 0.0,
            max_retries: 200,
        }
    }

    pub fn class_set(&self) -> Result<ClassSet> {
        let names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        ClassSet::new(&names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let kv = KeyValues::parse(source, text)?;
        kv.reject_unknown(&[
            "scenes",
            "id_prefix",
            "extent",
            "classes",
            "count.*",
            "dims.*",
            "dims_jitter.*",
            "intensity.*",
            "distractors",
            "distractor_dims_min",
            "distractor_dims_max",
            "distractor_intensity",
            "distractor_density",
            "clutter_points",
            "point_density",
            "min_object_points",
            "intensity_noise",
            "min_gap",
            "yaw_jitter",
            "max_retries",
        ])?;
        let base = Self::reference(0, "scene_");
        let class_names: Vec<String> = match kv.raw("classes") {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            None => base.classes.iter().map(|c| c.name.clone()).collect(),
        };
        let mut classes = Vec::new();
        for name in &class_names {
            let mut profile = ClassProfile::builtin(name).unwrap_or(ClassProfile {
                name: name.clone(),
                dims: [0.0; 3],
                dims_jitter: [0.0; 3],
                intensity: f64::NAN,
                count: (0, 0),
            });
            if let Some(v) = kv.raw(&format!("dims.{name}")) {
                profile.dims = parse_triple(&kv, &format!("dims.{name}"), v)?;
            }
            if let Some(v) = kv.raw(&format!("dims_jitter.{name}")) {
                profile.dims_jitter = parse_triple(&kv, &format!("dims_jitter.{name}"), v)?;
            }
            if let Some(v) = kv.get(&format!("intensity.{name}"))? {
                profile.intensity = v;
            }
            if let Some(v) = kv.raw(&format!("count.{name}")) {
                profile.count = range(&kv, &format!("count.{name}"), v)?;
            }
            if profile.dims.iter().any(|d| *d <= 0.0) || !profile.intensity.is_finite() {
                return Err(Error::Config(format!(
                    "class `{name}` has no built-in profile; give dims.{name} and intensity.{name}"
                )));
            }
            classes.push(profile);
        }
        // Profiles for classes not listed are an error rather than silently ignored.
        for family in ["count", "dims", "dims_jitter", "intensity"] {
            if let Some((name, _)) = kv
                .with_prefix(family)
                .find(|(n, _)| !class_names.iter().any(|c| c == n))
            {
                return Err(Error::Config(format!(
                    "`{family}.{name}` refers to a class not in `classes`"
                )));
            }
        }

        let fpair = |key: &str, default: (f64, f64)| -> Result<(f64, f64)> {
            match kv.raw(key) {
                None => Ok(default),
                Some(v) => {
                    let parts: Vec<&str> = v.split(',').collect();
                    if parts.len() != 2 {
                        return Err(Error::Config(format!("`{key}` expects `lo,hi`")));
                    }
                    Ok((
                        kv.parse_value(key, parts[0].trim())?,
                        kv.parse_value(key, parts[1].trim())?,
                    ))
                }
            }
        };
        let triple = |key: &str, default: [f64; 3]| -> Result<[f64; 3]> {
            kv.raw(key)
                .map_or(Ok(default), |v| parse_triple(&kv, key, v))
        };

        let spec = Self {
            scenes: kv.get_or("scenes", 10)?,
            id_prefix: kv.get_or("id_prefix", base.id_prefix.clone())?,
            extent: kv.get_or("extent", base.extent)?,
            classes,
            distractors: match kv.raw("distractors") {
                Some(v) => range(&kv, "distractors", v)?,
                None => base.distractors,
            },
            distractor_dims_min: triple("distractor_dims_min", base.distractor_dims_min)?,
            distractor_dims_max: triple("distractor_dims_max", base.distractor_dims_max)?,
            distractor_intensity: fpair("distractor_intensity", base.distractor_intensity)?,
            distractor_density: fpair("distractor_density", base.distractor_density)?,
            clutter_points: kv.get_or("clutter_points", base.clutter_points)?,
            point_density: kv.get_or("point_density", base.point_density)?,
            min_object_points: kv.get_or("min_object_points", base.min_object_points)?,
            intensity_noise: kv.get_or("intensity_noise", base.intensity_noise)?,
            min_gap: kv.get_or("min_gap", base.min_gap)?,
            yaw_jitter: kv.get_or("yaw_jitter", base.yaw_jitter)?,
            max_retries: kv.get_or("max_retries", base.max_retries)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&format!("{}0", self.id_prefix))?;
        self.class_set()?;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.extent) || !positive(self.point_density) {
            return Err(Error::Config("extent and point_density must be positive".into()));
        }
        if self.min_object_points == 0 || self.max_retries == 0 {
            return Err(Error::Config(
                "min_object_points and max_retries must be at least 1".into(),
            ));
        }
        if !(self.min_gap >= 0.0 && self.intensity_noise >= 0.0 && self.yaw_jitter >= 0.0) {
            return Err(Error::Config(
                "min_gap, intensity_noise and yaw_jitter must be nonnegative".into(),
            ));
        }
        for c in &self.classes {
            if c.count.0 > c.count.1 {
                return Err(Error::Config(format!("empty count range for `{}`", c.name)));
            }
            for k in 0..3 {
                if c.dims[k] - c.dims_jitter[k] <= 0.0 || c.dims_jitter[k] < 0.0 {
                    return Err(Error::Config(format!(
                        "class `{}` can produce nonpositive dimensions",
                        c.name
                    )));
                }
            }
        }
        let (dmin, dmax) = (self.distractor_dims_min, self.distractor_dims_max);
        if (0..3).any(|k| !(dmin[k] > 0.0 && dmin[k] <= dmax[k]))
            || self.distractor_intensity.0 > self.distractor_intensity.1
            || !(self.distractor_density.0 > 0.0
                && self.distractor_density.0 <= self.distractor_density.1)
            || self.distractors.0 > self.distractors.1
        {
            return Err(Error::Config("invalid distractor parameters".into()));
        }
        Ok(())
    }
}

fn parse_triple(kv: &KeyValues, key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("`{key}` expects three comma-separated values")));
    }
    Ok([
        kv.parse_value(key, parts[0])?,
        kv.parse_value(key, parts[1])?,
        kv.parse_value(key, parts[2])?,
    ])
}

fn range(kv: &KeyValues, key: &str, value: &str) -> Result<(usize, usize)> {
    parse_range(value).ok_or_else(|| {
        Error::format(
            kv.source().to_string(),
            format!("`{key}` expects `n` or `lo-hi`, got `{value}`"),
        )
    })
}

struct Placed {
    inflated: Box3D,
}

fn inflate(b: &Box3D, margin: f64) -> Box3D {
    let d = b.dims();
    Box3D::new(
        b.center(),
        Dims {
            length: d.length + margin,
            width: d.width + margin,
            height: d.height,
        },
        b.yaw(),
    )
    .expect("inflated box stays valid")
}

fn place(
    rng: &mut Rng,
    spec: &DatasetSpec,
    placed: &mut Vec<Placed>,
    dims: Dims,
    what: &str,
    scene_id: &str,
) -> Result<Box3D> {
    let half = spec.extent / 2.0;
    for _ in 0..spec.max_retries {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        let heading = if rng.random_bool(0.5) { 0.0 } else { FRAC_PI_2 };
        let jitter = if spec.yaw_jitter > 0.0 {
            rng.random_range(-spec.yaw_jitter..spec.yaw_jitter)
        } else {
            0.0
        };
        let bbox = Box3D::new([x, y, dims.height / 2.0], dims, heading + jitter)?;
        let inflated = inflate(&bbox, spec.min_gap);
        if placed
            .iter()
            .all(|p| bev_intersection_area(&p.inflated, &inflated) == 0.0)
        {
            placed.push(Placed { inflated });
            return Ok(bbox);
        }
    }
    Err(Error::Infeasible(format!(
        "could not place {what} in scene `{scene_id}` after {} attempts",
        spec.max_retries
    )))
}

/// Exponent < 1 pushes returns toward the top of the box.
fn fill_box(
    rng: &mut Rng,
    cloud: &mut PointCloud,
    bbox: &Box3D,
    count: usize,
    intensity: f64,
    noise: &Normal<f64>,
    z_exponent: f64,
) {
    // Keep samples a hair inside the faces so f32 rounding cannot push them out.
    const SHRINK: f64 = 0.999;
    let d = bbox.dims();
    let [cx, cy, cz] = bbox.center();
    let (s, c) = bbox.yaw().sin_cos();
    for _ in 0..count {
        let lx = rng.random_range(-0.5..0.5) * d.length * SHRINK;
        let ly = rng.random_range(-0.5..0.5) * d.width * SHRINK;
        let u: f64 = rng.random_range(0.0..1.0);
        let lz = (u.powf(z_exponent) - 0.5) * d.height * SHRINK;
        let i = (intensity + noise.sample(rng)).clamp(0.0, 1.0);
        cloud.push(Point::new(
            (cx + c * lx - s * ly) as f32,
            (cy + s * lx + c * ly) as f32,
            (cz + lz) as f32,
            i as f32,
        ));
    }
}

fn generate_scene(spec: &DatasetSpec, seed: u64, index: usize) -> Result<Scene> {
    let scene_id = format!("{}{index:06}", spec.id_prefix);
    let mut rng = stream(seed, &["synthetic", &scene_id]);
    let noise = Normal::new(0.0, spec.intensity_noise.max(1e-12)).expect("valid sigma");
    let mut placed = Vec::new();
    let mut cloud = PointCloud::default();
    let mut labels = Vec::new();

    for (class_id, profile) in spec.classes.iter().enumerate() {
        let n = rng.random_range(profile.count.0..=profile.count.1);
        for _ in 0..n {
            let mut lwh = [0.0; 3];
            for k in 0..3 {
                let j = profile.dims_jitter[k];
                lwh[k] = profile.dims[k] + if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
            }
            let dims = Dims {
                length: lwh[0],
                width: lwh[1],
                height: lwh[2],
            };
            let bbox = place(&mut rng, spec, &mut placed, dims, &profile.name, &scene_id)?;
            let count = ((spec.point_density * lwh[0] * lwh[1]).round() as usize)
                .max(spec.min_object_points);
            fill_box(&mut rng, &mut cloud, &bbox, count, profile.intensity, &noise, 1.0);
            labels.push(ObjectLabel { bbox, class_id });
        }
    }

    let n_distractors = rng.random_range(spec.distractors.0..=spec.distractors.1);
    for _ in 0..n_distractors {
        let mut lwh = [0.0; 3];
        for k in 0..3 {
            let (lo, hi) = (spec.distractor_dims_min[k], spec.distractor_dims_max[k]);
            lwh[k] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        let dims = Dims {
            length: lwh[0],
            width: lwh[1],
            height: lwh[2],
        };
        let bbox = place(&mut rng, spec, &mut placed, dims, "distractor", &scene_id)?;
        let (ilo, ihi) = spec.distractor_intensity;
        let intensity = if ihi > ilo { rng.random_range(ilo..ihi) } else { ilo };
        let (dlo, dhi) = spec.distractor_density;
        let density = spec.point_density * if dhi > dlo { rng.random_range(dlo..dhi) } else { dlo };
        let z_exponent = rng.random_range(0.5..1.5);
        let count = ((density * lwh[0] * lwh[1]).round() as usize).max(spec.min_object_points);
        fill_box(&mut rng, &mut cloud, &bbox, count, intensity, &noise, z_exponent);
    }

    let half = spec.extent / 2.0;
    for _ in 0..spec.clutter_points {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        let z = rng.random_range(0.0..0.15);
        let i = rng.random_range(0.0..1.0);
        cloud.push(Point::new(x as f32, y as f32, z as f32, i as f32));
    }

    Ok(Scene {
        scene_id,
        cloud,
        labels,
    })
}

/// Generate `spec.scenes` scenes. The output is a pure function of
/// `(spec, seed)`; each scene draws from its own stream keyed by its id.
pub fn generate_synthetic_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<Scene>> {
    spec.validate()?;
    (0..spec.scenes)
        .map(|i| generate_scene(spec, seed, i))
        .collect()
}
