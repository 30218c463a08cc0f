use std::collections::HashSet;

use fpsampler_core::augmentor::{augment_scene, AugmentationPlan, Outcome};
use fpsampler_core::dataset::{encode_point_cloud, format_labels, ClassSet, ObjectLabel, Point, PointCloud, Scene};
use fpsampler_core::geometry::{bev_intersection_area, points_in_box, Box3D};
use fpsampler_core::rng::{seeded, Rng as ChaRng};
use fpsampler_core::sample_db::{Provenance, Sample, SampleDatabase, SampleKind};
use rand::Rng;

fn random_box(rng: &mut ChaRng, spread: f64) -> Box3D {
    Box3D::from_parts(
        [rng.random_range(-spread..spread), rng.random_range(-spread..spread), 0.9],
        [rng.random_range(0.5..4.0), rng.random_range(0.4..2.0), 1.8],
        rng.random_range(-3.0..3.0),
    )
}

fn points_inside(b: &Box3D, n: usize, rng: &mut ChaRng) -> PointCloud {
    let d = b.dims();
    let [cx, cy, cz] = b.center();
    let (s, c) = b.yaw().sin_cos();
    (0..n)
        .map(|_| {
            let u = rng.random_range(-0.45..0.45) * d.length;
            let v = rng.random_range(-0.45..0.45) * d.width;
            let w = rng.random_range(-0.45..0.45) * d.height;
            Point::new((cx + c * u - s * v) as f32, (cy + s * u + c * v) as f32, (cz + w) as f32, 0.5)
        })
        .collect()
}

fn random_db(kind: SampleKind, n: usize, classes: &ClassSet, rng: &mut ChaRng) -> SampleDatabase {
    let samples = (0..n)
        .map(|i| {
            let bbox = random_box(rng, 15.0);
            Sample {
                id: format!("{}_{i:03}", kind.as_str()),
                class_id: rng.random_range(0..classes.len()),
                bbox,
                points: points_inside(&bbox, rng.random_range(5..40), rng),
                origin_scene_id: "elsewhere".into(),
                kind,
            }
        })
        .collect();
    SampleDatabase::from_samples(classes.clone(), samples, 1, Provenance::default()).unwrap()
}

fn random_scene(classes: &ClassSet, rng: &mut ChaRng) -> Scene {
    let mut labels: Vec<ObjectLabel> = Vec::new();
    for _ in 0..rng.random_range(0..6) {
        let b = random_box(rng, 15.0);
        if labels.iter().all(|l| bev_intersection_area(&l.bbox, &b) == 0.0) {
            labels.push(ObjectLabel {
                bbox: b,
                class_id: rng.random_range(0..classes.len()),
            });
        }
    }
    let mut points: Vec<Point> = (0..rng.random_range(0..400))
        .map(|_| Point::new(rng.random_range(-18.0..18.0), rng.random_range(-18.0..18.0), rng.random_range(0.0..2.0), 0.1))
        .collect();
    for l in &labels {
        points.extend(points_inside(&l.bbox, 20, rng).into_points());
    }
    Scene {
        scene_id: "target".into(),
        cloud: PointCloud::new(points),
        labels,
    }
}

#[test]
fn invariants_hold_over_random_trials() {
    let classes = ClassSet::kitti();
    let mut rng = seeded(2024);
    for trial in 0..300 {
        let scene = random_scene(&classes, &mut rng);
        let gt = random_db(SampleKind::Gt, rng.random_range(0..25), &classes, &mut rng);
        let fp = random_db(SampleKind::Fp, rng.random_range(0..25), &classes, &mut rng);
        let plan = AugmentationPlan {
            gt_count: (0..3).map(|_| rng.random_range(0..4)).collect(),
            fp_count: (0..3).map(|_| rng.random_range(0..4)).collect(),
            max_placement_retries: rng.random_range(1..6),
            carve_out: rng.random_bool(0.5),
        };
        let use_fp = rng.random_bool(0.8);
        let fp_db = use_fp.then_some(&fp);
        let seed = rng.random::<u64>();
        let out = augment_scene(&scene, &gt, fp_db, &plan, &mut seeded(seed));

        // determinism
        let again = augment_scene(&scene, &gt, fp_db, &plan, &mut seeded(seed));
        assert_eq!(encode_point_cloud(&out.cloud), encode_point_cloud(&again.cloud), "trial {trial}");
        assert_eq!(format_labels(&out.labels, &classes), format_labels(&again.labels, &classes));
        assert_eq!(out.trace, again.trace);

        // slots and sample use
        let expected_slots: usize = plan.gt_count.iter().sum::<usize>() + if use_fp { plan.fp_count.iter().sum() } else { 0 };
        assert_eq!(out.trace.entries.len(), expected_slots);
        let mut seen = HashSet::new();
        let lookup = |id: &str| gt.samples().chain(fp.samples()).find(|s| s.id == id).cloned().unwrap();
        let mut placed: Vec<Sample> = Vec::new();
        for e in &out.trace.entries {
            if let (Outcome::Placed, Some(id)) = (e.outcome, &e.sample_id) {
                assert!(seen.insert(id.clone()), "sample {id} reused");
                let s = lookup(id);
                assert_eq!((s.kind, s.class_id), (e.kind, e.class_id));
                placed.push(s);
            }
        }

        // labels: originals first, then one per placed GT sample
        let gt_boxes: Vec<Box3D> = placed.iter().filter(|s| s.kind == SampleKind::Gt).map(|s| s.bbox).collect();
        assert_eq!(out.labels.len(), scene.labels.len() + gt_boxes.len());
        assert_eq!(&out.labels[..scene.labels.len()], &scene.labels[..]);
        let added: Vec<Box3D> = out.labels[scene.labels.len()..].iter().map(|l| l.bbox).collect();
        assert_eq!(added, gt_boxes);

        // collision-free: every placed box is disjoint from every other box
        let originals: Vec<Box3D> = scene.labels.iter().map(|l| l.bbox).collect();
        for (i, s) in placed.iter().enumerate() {
            for o in &originals {
                assert_eq!(bev_intersection_area(&s.bbox, o), 0.0);
            }
            for t in &placed[..i] {
                assert_eq!(bev_intersection_area(&s.bbox, &t.bbox), 0.0);
            }
        }

        // point accounting
        let carved: HashSet<usize> = if plan.carve_out {
            placed.iter().flat_map(|s| points_in_box(&scene.cloud, &s.bbox)).collect()
        } else {
            HashSet::new()
        };
        assert_eq!(out.removed_points, carved.len());
        let inserted: usize = placed.iter().map(|s| s.points.len()).sum();
        assert_eq!(out.cloud.len(), scene.cloud.len() - carved.len() + inserted);
        let kept: Vec<Point> = (0..scene.cloud.len())
            .filter(|i| !carved.contains(i))
            .map(|i| scene.cloud.points()[i])
            .collect();
        assert_eq!(&out.cloud.points()[..kept.len()], &kept[..]);
    }
}

#[test]
fn zero_plan_is_identity() {
    let classes = ClassSet::kitti();
    let mut rng = seeded(3);
    let scene = random_scene(&classes, &mut rng);
    let gt = random_db(SampleKind::Gt, 10, &classes, &mut rng);
    let out = augment_scene(&scene, &gt, None, &AugmentationPlan::zero(3), &mut seeded(1));
    assert_eq!(out.cloud, scene.cloud);
    assert_eq!(out.labels, scene.labels);
    assert!(out.trace.entries.is_empty());
}

#[test]
fn fp_samples_add_points_but_no_labels() {
    let classes = ClassSet::kitti();
    let mut rng = seeded(8);
    let scene = Scene {
        scene_id: "empty".into(),
        cloud: PointCloud::default(),
        labels: Vec::new(),
    };
    let gt = SampleDatabase::empty(classes.clone());
    let fp = random_db(SampleKind::Fp, 30, &classes, &mut rng);
    let plan = AugmentationPlan {
        fp_count: vec![2, 2, 2],
        ..AugmentationPlan::zero(3)
    };
    let out = augment_scene(&scene, &gt, Some(&fp), &plan, &mut seeded(2));
    assert!(out.labels.is_empty());
    assert!(out.trace.placed(SampleKind::Fp) > 0);
    assert!(!out.cloud.is_empty());
}
