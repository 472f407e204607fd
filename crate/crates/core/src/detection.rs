//! Oriented rectangles in the ground plane: minimum-area fitting, IoU and detection matching.

use nalgebra::{Point2, Vector2};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::scene::SceneBox;

/// A box detected in the bird's-eye view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedBox {
    pub center: [f64; 2],
    /// Extent along the yaw direction, and across it.
    pub extent: [f64; 2],
    /// Radians in `(-pi/4, pi/4]`.
    pub yaw: f64,
    /// Fraction of the rectangle covered by the supporting cells.
    pub score: f64,
}

impl DetectedBox {
    pub fn corners(&self) -> [Point2<f64>; 4] {
        rect_corners(self.center, self.extent, self.yaw)
    }

    pub fn area(&self) -> f64 {
        self.extent[0] * self.extent[1]
    }
}

impl From<&SceneBox> for DetectedBox {
    fn from(b: &SceneBox) -> Self {
        let (extent, yaw) = normalize_rect([b.size[0], b.size[1]], b.yaw);
        DetectedBox {
            center: [b.center[0], b.center[1]],
            extent,
            yaw,
            score: 1.0,
        }
    }
}

fn rect_corners(center: [f64; 2], extent: [f64; 2], yaw: f64) -> [Point2<f64>; 4] {
    let (s, c) = yaw.sin_cos();
    let ex = Vector2::new(c, s) * (extent[0] / 2.0);
    let ey = Vector2::new(-s, c) * (extent[1] / 2.0);
    let ctr = Point2::new(center[0], center[1]);
    [ctr - ex - ey, ctr + ex - ey, ctr + ex + ey, ctr - ex + ey]
}

/// Folds a rectangle's yaw into `(-pi/4, pi/4]`, swapping extents as needed.
pub fn normalize_rect(extent: [f64; 2], yaw: f64) -> ([f64; 2], f64) {
    let mut yaw = yaw.rem_euclid(std::f64::consts::PI);
    if yaw > FRAC_PI_2 {
        yaw -= std::f64::consts::PI;
    }
    let mut extent = extent;
    if yaw > FRAC_PI_4 {
        yaw -= FRAC_PI_2;
        extent.swap(0, 1);
    } else if yaw <= -FRAC_PI_4 {
        yaw += FRAC_PI_2;
        extent.swap(0, 1);
    }
    (extent, yaw)
}

/// Difference of two rectangle yaws modulo the rectangle's 90-degree symmetry.
pub fn yaw_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(FRAC_PI_2);
    d.min(FRAC_PI_2 - d)
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by monotone chain, counter-clockwise, no collinear points.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts: Vec<Point2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle of `points` (rotating calipers over hull edges).
///
/// Returns `(center, extent, yaw)` with yaw folded into `(-pi/4, pi/4]`.
pub fn min_area_rect(points: &[Point2<f64>]) -> Option<([f64; 2], [f64; 2], f64)> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, [f64; 2], [f64; 2], f64)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let len = edge.norm();
        if len < 1e-12 {
            continue;
        }
        let u = edge / len;
        let v = Vector2::new(-u.y, u.x);
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let (a, b) = (p.coords.dot(&u), p.coords.dot(&v));
            u0 = u0.min(a);
            u1 = u1.max(a);
            v0 = v0.min(b);
            v1 = v1.max(b);
        }
        let area = (u1 - u0) * (v1 - v0);
        if best.is_none_or(|b| area < b.0 - 1e-15) {
            let c = u * ((u0 + u1) / 2.0) + v * ((v0 + v1) / 2.0);
            best = Some((area, [c.x, c.y], [u1 - u0, v1 - v0], u.y.atan2(u.x)));
        }
    }
    best.map(|(_, center, extent, yaw)| {
        let (extent, yaw) = normalize_rect(extent, yaw);
        (center, extent, yaw)
    })
}

fn polygon_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(&a, &b, &cur) >= 0.0;
            let prev_in = cross(&a, &b, &prev) >= 0.0;
            if cur_in != prev_in {
                let (dp, dc) = (cross(&a, &b, &prev), cross(&a, &b, &cur));
                let t = dp / (dp - dc);
                out.push(prev + (cur - prev) * t);
            }
            if cur_in {
                out.push(cur);
            }
        }
    }
    out
}

/// Intersection over union of two oriented rectangles.
pub fn iou(a: &DetectedBox, b: &DetectedBox) -> f64 {
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchCounts {
    pub fn add(&mut self, other: MatchCounts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positives + self.false_positives + self.false_negatives;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_positives as f64 / denom as f64
        }
    }
}

/// Greedy one-to-one matching in decreasing IoU order; pairs below `threshold` never match.
pub fn match_detections(detections: &[DetectedBox], truth: &[DetectedBox], threshold: f64) -> MatchCounts {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let v = iou(d, t);
            if v >= threshold {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detections.len()];
    let mut used_t = vec![false; truth.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    MatchCounts {
        true_positives: tp,
        false_positives: detections.len() - tp,
        false_negatives: truth.len() - tp,
    }
}
