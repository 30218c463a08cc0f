use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{validate_scenes, ClassSet, ObjectLabel, Point, PointCloud, Scene};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_bytes, read_to_string};
use crate::geometry::{Box3D, Dims};

pub const CLOUDS_DIR: &str = "clouds";
pub const LABELS_DIR: &str = "labels";
pub const CLASSES_FILE: &str = "classes.txt";

const RECORD_BYTES: usize = 16;

/// Parse a velodyne-style `.bin` buffer: little-endian `f32` quadruples
/// `(x, y, z, intensity)`.
pub fn decode_point_cloud(bytes: &[u8], location: &str) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::format(
            location,
            format!(
                "length {} bytes is not a multiple of {RECORD_BYTES}",
                bytes.len()
            ),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (idx, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(Error::format(
                location,
                format!("record {idx} has a non-finite value"),
            ));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points))
}

pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = read_bytes(path)?;
    decode_point_cloud(&bytes, &path.display().to_string())
}

pub fn save_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    atomic_write(path, &encode_point_cloud(cloud))
}

pub(crate) fn format_box(out: &mut String, b: &Box3D) {
    let [cx, cy, cz] = b.center();
    let d = b.dims();
    write!(
        out,
        "{cx} {cy} {cz} {} {} {} {}",
        d.length,
        d.width,
        d.height,
        b.yaw()
    )
    .unwrap();
}

/// Parse seven whitespace-separated numbers into a box.
pub(crate) fn parse_box(fields: &[&str], location: &str) -> Result<Box3D> {
    let mut v = [0.0f64; 7];
    for (slot, text) in v.iter_mut().zip(fields) {
        *slot = text
            .parse()
            .map_err(|_| Error::format(location, format!("non-numeric field `{text}`")))?;
    }
    let dims = Dims {
        length: v[3],
        width: v[4],
        height: v[5],
    };
    Box3D::new([v[0], v[1], v[2]], dims, v[6])
        .map_err(|e| Error::format(location, e.to_string()))
}

pub fn parse_labels(text: &str, classes: &ClassSet, source: &str) -> Result<Vec<ObjectLabel>> {
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let location = format!("{source}:{}", idx + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 8 {
            return Err(Error::format(
                location,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let class_id = classes
            .id(fields[0])
            .ok_or_else(|| Error::format(&location, format!("unknown class `{}`", fields[0])))?;
        let bbox = parse_box(&fields[1..], &location)?;
        labels.push(ObjectLabel { bbox, class_id });
    }
    Ok(labels)
}

pub fn format_labels(labels: &[ObjectLabel], classes: &ClassSet) -> String {
    let mut out = String::new();
    for label in labels {
        out.push_str(classes.name(label.class_id));
        out.push(' ');
        format_box(&mut out, &label.bbox);
        out.push('\n');
    }
    out
}

pub fn load_labels(path: &Path, classes: &ClassSet) -> Result<Vec<ObjectLabel>> {
    let text = read_to_string(path)?;
    parse_labels(&text, classes, &path.display().to_string())
}

pub fn save_labels(labels: &[ObjectLabel], classes: &ClassSet, path: &Path) -> Result<()> {
    atomic_write(path, format_labels(labels, classes).as_bytes())
}

pub fn load_classes(path: &Path) -> Result<ClassSet> {
    let text = read_to_string(path)?;
    let names: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    ClassSet::new(&names).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

pub fn load_scene(dir: &Path, scene_id: &str, classes: &ClassSet) -> Result<Scene> {
    let cloud = load_point_cloud(&dir.join(CLOUDS_DIR).join(format!("{scene_id}.bin")))?;
    let labels = load_labels(
        &dir.join(LABELS_DIR).join(format!("{scene_id}.txt")),
        classes,
    )?;
    Ok(Scene {
        scene_id: scene_id.to_string(),
        cloud,
        labels,
    })
}

pub fn save_scene(dir: &Path, scene: &Scene, classes: &ClassSet) -> Result<()> {
    save_point_cloud(
        &scene.cloud,
        &dir.join(CLOUDS_DIR).join(format!("{}.bin", scene.scene_id)),
    )?;
    save_labels(
        &scene.labels,
        classes,
        &dir.join(LABELS_DIR).join(format!("{}.txt", scene.scene_id)),
    )
}

/// Load every scene of a dataset directory, ordered by scene id.
pub fn load_dataset(dir: &Path) -> Result<(ClassSet, Vec<Scene>)> {
    let classes = load_classes(&dir.join(CLASSES_FILE))?;
    let clouds = dir.join(CLOUDS_DIR);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&clouds).map_err(|e| Error::io(&clouds, e))? {
        let path = entry.map_err(|e| Error::io(&clouds, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("bin") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    let scenes = ids
        .iter()
        .map(|id| load_scene(dir, id, &classes))
        .collect::<Result<Vec<_>>>()?;
    Ok((classes, scenes))
}

pub fn save_dataset(dir: &Path, classes: &ClassSet, scenes: &[Scene]) -> Result<()> {
    validate_scenes(scenes, classes)?;
    let mut listing = classes.names().join("\n");
    listing.push('\n');
    atomic_write(&dir.join(CLASSES_FILE), listing.as_bytes())?;
    fs::create_dir_all(dir.join(CLOUDS_DIR)).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join(LABELS_DIR)).map_err(|e| Error::io(dir, e))?;
    for scene in scenes {
        save_scene(dir, scene, classes)?;
    }
    Ok(())
}
