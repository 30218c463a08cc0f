//! Scenes, point clouds and labels, their on-disk formats, and a seeded
//! synthetic scene generator.

mod io;
mod synthetic;

pub(crate) use io::{format_box, parse_box};
pub use io::{
    decode_point_cloud, encode_point_cloud, format_labels, load_classes, parse_labels, load_dataset, load_labels, load_point_cloud, load_scene, save_dataset, save_labels,
    save_point_cloud, save_scene, CLASSES_FILE, CLOUDS_DIR, LABELS_DIR,
};
pub use synthetic::{generate_synthetic_dataset, ClassProfile, DatasetSpec};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::Box3D;

/// One LiDAR return. Coordinates in meters, intensity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn from_xyzi(rows: &[[f32; 4]]) -> Self {
        Self::new(
            rows.iter()
                .map(|&[x, y, z, i]| Point::new(x, y, z, i))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point) {
        self.points.push(p);
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    /// A new cloud holding the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Ordered, unique class names. The position of a name is its class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("class set must not be empty".into()));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref().trim();
            if name.is_empty() || name.chars().any(char::is_whitespace) || name.contains(',') {
                return Err(Error::Config(format!("invalid class name `{name}`")));
            }
            if !seen.insert(name.to_string()) {
                return Err(Error::Config(format!("duplicate class name `{name}`")));
            }
            out.push(name.to_string());
        }
        Ok(Self { names: out })
    }

    /// car, pedestrian, cyclist.
    pub fn kitti() -> Self {
        Self::new(&["car", "pedestrian", "cyclist"]).expect("static class list")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class_id: usize) -> &str {
        &self.names[class_id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectLabel {
    pub bbox: Box3D,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub labels: Vec<ObjectLabel>,
}

impl Scene {
    pub fn gt_boxes(&self) -> impl Iterator<Item = &Box3D> {
        self.labels.iter().map(|l| &l.bbox)
    }
}

/// Scene ids double as file stems and whitespace-delimited index fields.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "id `{id}` must be nonempty ASCII letters, digits, `_`, `-` or `.`"
        )))
    }
}

/// Ensure scene ids are unique within one list and every label's class is known.
pub fn validate_scenes(scenes: &[Scene], classes: &ClassSet) -> Result<()> {
    let mut seen = HashSet::new();
    for scene in scenes {
        validate_id(&scene.scene_id)?;
        if !seen.insert(scene.scene_id.as_str()) {
            return Err(Error::Config(format!(
                "duplicate scene id `{}`",
                scene.scene_id
            )));
        }
        if let Some(bad) = scene.labels.iter().find(|l| l.class_id >= classes.len()) {
            return Err(Error::Config(format!(
                "scene `{}` has class id {} outside the class set",
                scene.scene_id, bad.class_id
            )));
        }
    }
    Ok(())
}
