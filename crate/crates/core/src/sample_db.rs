//! Class-keyed stores of cropped object samples, used both for ground-truth
//! objects and for mined false positives.
//!
//! On disk a database is a directory holding `index.txt` and one
//! `points/<id>.bin` file per sample. The index starts with `#key value`
//! metadata lines (`classes`, `generation`, `detector`, `epoch`) followed by
//! one whitespace-delimited record per sample:
//!
//! ```text
//! id class cx cy cz length width height yaw origin_scene kind point_count path
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::dataset::{validate_id, ClassSet, PointCloud, Scene};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_bytes, read_to_string};
use crate::geometry::{point_in_box, points_in_box, Box3D};
use crate::rng::Rng;

pub const INDEX_FILE: &str = "index.txt";
pub const POINTS_DIR: &str = "points";
/// Minimum number of points a crop needs to become a sample.
pub const DEFAULT_MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Gt,
    Fp,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Gt => "gt",
            SampleKind::Fp => "fp",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gt" => Some(SampleKind::Gt),
            "fp" => Some(SampleKind::Fp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub class_id: usize,
    pub bbox: Box3D,
    pub points: PointCloud,
    pub origin_scene_id: String,
    pub kind: SampleKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    /// Which detector (or `annotations`) produced the samples.
    pub detector: String,
    /// Training epoch at which the database was built, if any.
    pub epoch: Option<u32>,
}

/// An immutable set of samples grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDatabase {
    classes: ClassSet,
    by_class: Vec<Vec<Sample>>,
    generation: u32,
    provenance: Provenance,
}

impl SampleDatabase {
    pub fn empty(classes: ClassSet) -> Self {
        let by_class = vec![Vec::new(); classes.len()];
        Self {
            classes,
            by_class,
            generation: 0,
            provenance: Provenance::default(),
        }
    }

    /// Assemble a database, checking that ids are unique, classes are known,
    /// and each sample's points are nonempty and lie inside its box.
    pub fn from_samples(
        classes: ClassSet,
        samples: Vec<Sample>,
        generation: u32,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut by_class = vec![Vec::new(); classes.len()];
        let mut ids = HashSet::new();
        for sample in samples {
            validate_id(&sample.id)?;
            validate_id(&sample.origin_scene_id)?;
            if !ids.insert(sample.id.clone()) {
                return Err(Error::Config(format!("duplicate sample id `{}`", sample.id)));
            }
            if sample.class_id >= classes.len() {
                return Err(Error::Config(format!(
                    "sample `{}` has unknown class id {}",
                    sample.id, sample.class_id
                )));
            }
            if sample.points.is_empty() {
                return Err(Error::Config(format!("sample `{}` has no points", sample.id)));
            }
            if !sample.points.points().iter().all(|p| point_in_box(p, &sample.bbox)) {
                return Err(Error::Config(format!(
                    "sample `{}` has points outside its box",
                    sample.id
                )));
            }
            by_class[sample.class_id].push(sample);
        }
        if provenance.detector.chars().any(char::is_whitespace) {
            return Err(Error::Config("detector id must not contain whitespace".into()));
        }
        Ok(Self {
            classes,
            by_class,
            generation,
            provenance,
        })
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn class_samples(&self, class_id: usize) -> &[Sample] {
        self.by_class.get(class_id).map_or(&[], Vec::as_slice)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.by_class.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn sample_ids(&self) -> HashSet<&str> {
        self.samples().map(|s| s.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GtBuildReport {
    pub per_class: Vec<usize>,
    /// Labeled objects whose crop held fewer than `min_points` points.
    pub skipped: usize,
}

/// One sample per labeled object with at least `min_points` points, ordered
/// by scene then label index.
pub fn build_gt_database(
    scenes: &[Scene],
    classes: &ClassSet,
    min_points: usize,
) -> Result<(SampleDatabase, GtBuildReport)> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for scene in scenes {
        for (idx, label) in scene.labels.iter().enumerate() {
            let inside = points_in_box(&scene.cloud, &label.bbox);
            if inside.len() < min_points.max(1) {
                skipped += 1;
                continue;
            }
            samples.push(Sample {
                id: format!("gt_{}_{idx:03}", scene.scene_id),
                class_id: label.class_id,
                bbox: label.bbox,
                points: scene.cloud.select(&inside),
                origin_scene_id: scene.scene_id.clone(),
                kind: SampleKind::Gt,
            });
        }
    }
    let provenance = Provenance {
        detector: "annotations".into(),
        epoch: None,
    };
    let db = SampleDatabase::from_samples(classes.clone(), samples, 1, provenance)?;
    let report = GtBuildReport {
        per_class: db.per_class_counts(),
        skipped,
    };
    Ok((db, report))
}

/// Uniform draw from one class.
pub fn random_sample<'a>(db: &'a SampleDatabase, class_id: usize, rng: &mut Rng) -> Result<&'a Sample> {
    let pool = db.class_samples(class_id);
    if pool.is_empty() {
        let name = if class_id < db.classes.len() {
            db.classes.name(class_id).to_string()
        } else {
            format!("#{class_id}")
        };
        return Err(Error::EmptyClass(name));
    }
    Ok(&pool[rng.random_range(0..pool.len())])
}

pub fn save_database(db: &SampleDatabase, dir: &Path) -> Result<()> {
    let mut index = String::from("# fpsampler sample database v1\n");
    writeln!(index, "#classes {}", db.classes.names().join(" ")).unwrap();
    writeln!(index, "#generation {}", db.generation).unwrap();
    let detector = if db.provenance.detector.is_empty() {
        "-"
    } else {
        db.provenance.detector.as_str()
    };
    writeln!(index, "#detector {detector}").unwrap();
    match db.provenance.epoch {
        Some(e) => writeln!(index, "#epoch {e}").unwrap(),
        None => writeln!(index, "#epoch -").unwrap(),
    }
    for sample in db.samples() {
        let rel = format!("{POINTS_DIR}/{}.bin", sample.id);
        crate::dataset::save_point_cloud(&sample.points, &dir.join(&rel))?;
        write!(index, "{} {} ", sample.id, db.classes.name(sample.class_id)).unwrap();
        crate::dataset::format_box(&mut index, &sample.bbox);
        writeln!(
            index,
            " {} {} {} {rel}",
            sample.origin_scene_id,
            sample.kind.as_str(),
            sample.points.len()
        )
        .unwrap();
    }
    atomic_write(&dir.join(INDEX_FILE), index.as_bytes())
}

pub fn load_database(dir: &Path) -> Result<SampleDatabase> {
    let index_path = dir.join(INDEX_FILE);
    let text = read_to_string(&index_path)?;
    let src = index_path.display().to_string();

    let mut classes = None;
    let mut generation = None;
    let mut provenance = Provenance::default();
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let location = format!("{src}:{}", idx + 1);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let mut parts = meta.split_whitespace();
            match parts.next() {
                Some("classes") => {
                    let names: Vec<&str> = parts.collect();
                    classes = Some(
                        ClassSet::new(&names).map_err(|e| Error::format(&location, e.to_string()))?,
                    );
                }
                Some("generation") => {
                    generation = Some(
                        parts
                            .next()
                            .and_then(|g| g.parse::<u32>().ok())
                            .ok_or_else(|| Error::format(&location, "bad generation"))?,
                    );
                }
                Some("detector") => {
                    provenance.detector = match parts.next() {
                        Some("-") | None => String::new(),
                        Some(d) => d.to_string(),
                    };
                }
                Some("epoch") => {
                    provenance.epoch = match parts.next() {
                        Some("-") | None => None,
                        Some(e) => Some(
                            e.parse()
                                .map_err(|_| Error::format(&location, "bad epoch"))?,
                        ),
                    };
                }
                _ => {}
            }
            continue;
        }
        let classes = classes
            .as_ref()
            .ok_or_else(|| Error::format(&location, "record before `#classes` header"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 13 {
            return Err(Error::format(
                location,
                format!("expected 13 fields, found {}", fields.len()),
            ));
        }
        let id = fields[0];
        let class_id = classes
            .id(fields[1])
            .ok_or_else(|| Error::format(&location, format!("unknown class `{}`", fields[1])))?;
        let bbox = crate::dataset::parse_box(&fields[2..9], &location)?;
        let kind = SampleKind::parse(fields[10])
            .ok_or_else(|| Error::format(&location, format!("unknown kind `{}`", fields[10])))?;
        let count: usize = fields[11]
            .parse()
            .map_err(|_| Error::format(&location, "bad point count"))?;
        let rel = fields[12];
        if rel.split('/').any(|c| c == "..") || rel.starts_with('/') {
            return Err(Error::format(&location, "point path must stay inside the database"));
        }
        let points_path = dir.join(rel);
        let bytes = read_bytes(&points_path).map_err(|e| {
            Error::format(&location, format!("sample `{id}`: cannot read points: {e}"))
        })?;
        let points = crate::dataset::decode_point_cloud(&bytes, &points_path.display().to_string())?;
        if points.len() != count {
            return Err(Error::format(
                location,
                format!(
                    "sample `{id}`: index lists {count} points but {} has {}",
                    rel,
                    points.len()
                ),
            ));
        }
        samples.push(Sample {
            id: id.to_string(),
            class_id,
            bbox,
            points,
            origin_scene_id: fields[9].to_string(),
            kind,
        });
    }
    let classes = classes.ok_or_else(|| Error::format(&src, "missing `#classes` header"))?;
    let generation = generation.ok_or_else(|| Error::format(&src, "missing `#generation` header"))?;
    SampleDatabase::from_samples(classes, samples, generation, provenance)
        .map_err(|e| Error::format(src, e.to_string()))
}
