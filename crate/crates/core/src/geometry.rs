//! Oriented 3D box geometry.
//!
//! Boxes rotate about the vertical axis only, so every intersection splits
//! into a planar footprint overlap (a convex polygon clip) times a vertical
//! interval overlap.

use std::f64::consts::PI;

use crate::dataset::{Point, PointCloud};
use crate::error::{Error, Result};

/// Footprint intersections below this area are reported as exactly zero.
pub const AREA_EPSILON: f64 = 1e-12;

/// Box extents in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

/// An oriented box in the sensor frame. `yaw` rotates the length axis away
/// from +x, counter-clockwise seen from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    center: [f64; 3],
    dims: Dims,
    yaw: f64,
}

/// Wrap an angle into `[-π, π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let wrapped = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: Dims, yaw: f64) -> Result<Self> {
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite center {center:?}")));
        }
        let Dims {
            length,
            width,
            height,
        } = dims;
        if !(length > 0.0 && width > 0.0 && height > 0.0)
            || !(length.is_finite() && width.is_finite() && height.is_finite())
        {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive and finite, got {length} x {width} x {height}"
            )));
        }
        if !yaw.is_finite() {
            return Err(Error::InvalidBox(format!("non-finite yaw {yaw}")));
        }
        Ok(Self {
            center,
            dims,
            yaw: normalize_yaw(yaw),
        })
    }

    /// Convenience constructor for literal boxes; panics on invalid input.
    pub fn from_parts(center: [f64; 3], lwh: [f64; 3], yaw: f64) -> Self {
        let dims = Dims {
            length: lwh[0],
            width: lwh[1],
            height: lwh[2],
        };
        Self::new(center, dims, yaw).expect("valid box literal")
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.dims.length * self.dims.width * self.dims.height
    }

    pub fn z_range(&self) -> (f64, f64) {
        let half = self.dims.height / 2.0;
        (self.center[2] - half, self.center[2] + half)
    }

    /// The same box moved by `(dx, dy)` and rotated by `angle` about the origin.
    pub fn transformed(&self, dx: f64, dy: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let [x, y, z] = self.center;
        Self {
            center: [c * x - s * y + dx, s * x + c * y + dy, z],
            dims: self.dims,
            yaw: normalize_yaw(self.yaw + angle),
        }
    }

    /// Express a world point in box-local coordinates.
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let [lx, ly, lz] = self.to_local(p);
        lx.abs() <= self.dims.length / 2.0
            && ly.abs() <= self.dims.width / 2.0
            && lz.abs() <= self.dims.height / 2.0
    }

    fn bev_radius(&self) -> f64 {
        0.5 * self.dims.length.hypot(self.dims.width)
    }
}

/// Footprint corners, counter-clockwise, starting at the front-left corner.
pub fn bev_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let hl = b.dims.length / 2.0;
    let hw = b.dims.width / 2.0;
    let (s, c) = b.yaw.sin_cos();
    let [cx, cy, _] = b.center;
    [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]]
        .map(|[lx, ly]| [cx + c * lx - s * ly, cy + s * lx + c * ly])
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: f64 = poly
        .iter()
        .zip(poly.iter().cycle().skip(1))
        .map(|(a, b)| a[0] * b[1] - a[1] * b[0])
        .sum();
    twice.abs() / 2.0
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_side = cross(a, b, cur);
            let prev_side = cross(a, b, prev);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(segment_line_intersection(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(segment_line_intersection(prev, cur, prev_side, cur_side));
            }
        }
    }
    output
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], side_p: f64, side_q: f64) -> [f64; 2] {
    let t = side_p / (side_p - side_q);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the overlap of the two footprints, in square meters.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy >= reach * reach {
        return 0.0;
    }
    // Clip the lexicographically smaller box by the other so the result does
    // not depend on argument order.
    let (subject, clip) = if order_key(a) <= order_key(b) {
        (a, b)
    } else {
        (b, a)
    };
    let area = polygon_area(&clip_convex(&bev_corners(subject), &bev_corners(clip)));
    if area < AREA_EPSILON {
        0.0
    } else {
        area
    }
}

fn order_key(b: &Box3D) -> [f64; 7] {
    [
        b.center[0],
        b.center[1],
        b.center[2],
        b.dims.length,
        b.dims.width,
        b.dims.height,
        b.yaw,
    ]
}

fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

/// Volumetric intersection over union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    // Clipping a footprint by itself can lose a few ulps.
    if a == b {
        return 1.0;
    }
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let area = bev_intersection_area(a, b);
    if area <= 0.0 {
        return 0.0;
    }
    let inter = area * dz;
    let vol_a = polygon_area(&bev_corners(a)) * a.dims.height;
    let vol_b = polygon_area(&bev_corners(b)) * b.dims.height;
    let union = vol_a + vol_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Largest IoU between `pred` and any box in `gt_boxes`; 0 for an empty list.
pub fn max_iou_with_gt<'a, I>(pred: &Box3D, gt_boxes: I) -> f64
where
    I: IntoIterator<Item = &'a Box3D>,
{
    gt_boxes
        .into_iter()
        .map(|g| iou_3d(pred, g))
        .fold(0.0, f64::max)
}

/// Indices of the points inside `b` (faces included), ascending.
pub fn points_in_box(cloud: &PointCloud, b: &Box3D) -> Vec<usize> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| b.contains(p.position()))
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn point_in_box(p: &Point, b: &Box3D) -> bool {
    b.contains(p.position())
}
