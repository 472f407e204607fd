//! Ray intersection primitives: planes, oriented boxes, capsules and rectangles.

use nalgebra::{Point3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>) -> Self {
        Self {
            origin,
            dir: dir.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// Smallest parameter accepted as a hit, avoids self-intersection after a bounce.
pub const T_MIN: f64 = 1e-9;

/// Hit parameter with the plane `n . x + d = 0`, from either side.
pub fn ray_plane(ray: &Ray, normal: &Vector3<f64>, d: f64) -> Option<f64> {
    let denom = normal.dot(&ray.dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = -(normal.dot(&ray.origin.coords) + d) / denom;
    (t > T_MIN).then_some(t)
}

/// Slab test against a box with `half` extents, centered at `center`, rotated by `yaw` about `Z`.
/// Rays starting inside the box do not hit it.
pub fn ray_oriented_box(ray: &Ray, center: &Point3<f64>, half: &Vector3<f64>, yaw: f64) -> Option<f64> {
    let (s, c) = yaw.sin_cos();
    let rel = ray.origin - center;
    // rotate by -yaw into the box frame
    let o = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
    let dir = Vector3::new(c * ray.dir.x + s * ray.dir.y, -s * ray.dir.x + c * ray.dir.y, ray.dir.z);
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let (mut t0, mut t1) = ((-half[k] - o[k]) * inv, (half[k] - o[k]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > T_MIN).then_some(t_near)
}

/// Nearest hit with the capsule swept by a sphere of `radius` along `p0 -> p1`.
pub fn ray_capsule(ray: &Ray, p0: &Point3<f64>, p1: &Point3<f64>, radius: f64) -> Option<f64> {
    let ba = p1 - p0;
    let oa = ray.origin - p0;
    let baba = ba.dot(&ba);
    let bard = ba.dot(&ray.dir);
    let baoa = ba.dot(&oa);
    let rdoa = ray.dir.dot(&oa);
    let oaoa = oa.dot(&oa);
    let a = baba - bard * bard;
    let b = baba * rdoa - baoa * bard;
    let c = baba * oaoa - baoa * baoa - radius * radius * baba;
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > T_MIN && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    if a > 1e-15 {
        let h = b * b - a * c;
        if h >= 0.0 {
            let t = (-b - h.sqrt()) / a;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                consider(t);
            }
        }
    }
    for cap in [p0, p1] {
        if let Some(t) = ray_sphere(ray, cap, radius) {
            consider(t);
        }
    }
    best
}

pub fn ray_sphere(ray: &Ray, center: &Point3<f64>, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.dir);
    let c = oc.dot(&oc) - radius * radius;
    let h = b * b - c;
    if h < 0.0 {
        return None;
    }
    let t = -b - h.sqrt();
    (t > T_MIN).then_some(t)
}

/// Distance between point `p` and segment `a -> b`.
pub fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}
