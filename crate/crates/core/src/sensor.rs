//! Pinhole depth-camera simulator with a single mirror bounce.
//!
//! Each pixel casts one ray. When the nearest hit is the front face of the
//! mirror patch the ray is reflected and traced for exactly one more leg. The
//! recorded point lies along the *original* ray at the total path length, so
//! mirror returns appear as virtual points behind the mirror, as a real
//! depth sensor would report them.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::geometry::{Frame, HomogeneousTransform, PointCloud};
use crate::raycast::{ray_capsule, ray_oriented_box, ray_plane, Ray};
use crate::scene::{Capsule, MirrorPatch, SceneBox, SceneModel};

/// Depth value stored for pixels without a return.
pub const NO_RETURN: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Radians.
    pub horizontal_fov: f64,
    /// Radians.
    pub vertical_fov: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            horizontal_fov: 60f64.to_radians(),
            vertical_fov: 45f64.to_radians(),
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Validation("camera width and height must be >= 2".into()));
        }
        let ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !ok(self.horizontal_fov) || !ok(self.vertical_fov) {
            return Err(Error::Validation("camera fields of view must be in (0, pi)".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray direction of pixel `(u, v)` in the camera frame (camera looks along `-Z`,
    /// image columns grow along `+X`, rows grow along `-Y`).
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let tx = (self.horizontal_fov / 2.0).tan();
        let ty = (self.vertical_fov / 2.0).tan();
        let x = (2.0 * (u as f64 + 0.5) / self.width as f64 - 1.0) * tx;
        let y = (1.0 - 2.0 * (v as f64 + 0.5) / self.height as f64) * ty;
        Vector3::new(x, y, -1.0).normalize()
    }

    /// Pixel whose ray passes closest to the camera-frame direction `dir`, if inside the image.
    pub fn project(&self, dir: &Vector3<f64>) -> Option<(usize, usize)> {
        if dir.z >= 0.0 {
            return None;
        }
        let tx = (self.horizontal_fov / 2.0).tan();
        let ty = (self.vertical_fov / 2.0).tan();
        let x = dir.x / -dir.z / tx;
        let y = dir.y / -dir.z / ty;
        if x.abs() > 1.0 || y.abs() > 1.0 {
            return None;
        }
        let u = (((x + 1.0) / 2.0) * self.width as f64).floor() as usize;
        let v = (((1.0 - y) / 2.0) * self.height as f64).floor() as usize;
        Some((u.min(self.width - 1), v.min(self.height - 1)))
    }
}

/// Range noise and signal dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Range standard deviation at the reference distance, meters.
    pub sigma0: f64,
    /// Reference distance, meters.
    pub reference_distance: f64,
    /// 1 for error linear in distance, 2 for quadratic.
    pub exponent: u32,
    /// Returns with signal below this level are dropped.
    pub dropout_threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma0: 0.002,
            reference_distance: 2.0,
            exponent: 2,
            dropout_threshold: 0.15,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma0: 0.0,
            dropout_threshold: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 >= 0.0) {
            return Err(Error::Validation("noise.sigma0 must be >= 0".into()));
        }
        if !(self.reference_distance > 0.0) {
            return Err(Error::Validation("noise.reference_distance must be > 0".into()));
        }
        if !matches!(self.exponent, 1 | 2) {
            return Err(Error::Validation("noise.exponent must be 1 or 2".into()));
        }
        if !(self.dropout_threshold >= 0.0) {
            return Err(Error::Validation("noise.dropout_threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Range standard deviation at distance `d`.
    pub fn sigma(&self, d: f64) -> f64 {
        self.sigma0 * (d / self.reference_distance).powi(self.exponent as i32)
    }

    /// Received signal level for a return at distance `d` carrying `attenuation`.
    pub fn signal(&self, d: f64, attenuation: f64) -> f64 {
        attenuation * (self.reference_distance / d).powi(2)
    }

    /// Independent per-pixel generator, so results do not depend on traversal order.
    fn pixel_rng(&self, pixel: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pixel as u64);
        rng
    }
}

/// Ratio of the reflection working distance to the direct one at tilt `theta`.
pub fn reflect_working_distance(theta: f64) -> Result<f64> {
    if !theta.is_finite() || theta.abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!("tilt {theta} rad outside (-pi/2, pi/2)")));
    }
    Ok(1.0 / theta.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    Ground,
    Box(usize),
    Arm(usize),
}

/// Geometry behind one recorded point, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnInfo {
    pub pixel: usize,
    pub surface: Surface,
    /// Noise-free path length.
    pub true_range: f64,
    pub surface_point: Point3<f64>,
    pub mirror_hit: Option<Point3<f64>>,
}

#[derive(Debug, Clone)]
pub struct Capture {
    /// Points in the camera frame (`TiltedSensor` for rig captures).
    pub cloud: PointCloud,
    /// Row-major recorded ranges, `NO_RETURN` where nothing came back.
    pub depth_image: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub tilt_angle: f64,
    pub world_from_camera: HomogeneousTransform,
    /// Per point, parallel to `cloud.points`.
    pub returns: Vec<ReturnInfo>,
}

impl Capture {
    pub fn empty(tilt_angle: f64, intrinsics: &CameraIntrinsics) -> Self {
        Self {
            cloud: PointCloud::new(Frame::TiltedSensor),
            depth_image: vec![NO_RETURN; intrinsics.pixel_count()],
            width: intrinsics.width,
            height: intrinsics.height,
            tilt_angle,
            world_from_camera: HomogeneousTransform::identity(),
            returns: Vec::new(),
        }
    }

    /// Points mapped to the world frame through the capture pose, virtual points left as recorded.
    pub fn world_cloud(&self) -> PointCloud {
        crate::geometry::apply(&self.world_from_camera, &self.cloud, Frame::World)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHit {
    pub surface: Surface,
    pub point: Point3<f64>,
    pub range: f64,
    pub mirror_hit: Option<Point3<f64>>,
}

enum Nearest {
    Solid(Surface, f64),
    Mirror(f64),
}

/// Scene geometry prepared for ray queries.
pub struct Tracer<'a> {
    boxes: &'a [SceneBox],
    capsules: Vec<Capsule>,
    mirror: Option<(&'a MirrorPatch, f64)>,
}

impl<'a> Tracer<'a> {
    /// `mirror_enabled = false` removes the mirror from the world entirely.
    pub fn new(scene: &'a SceneModel, mirror_enabled: bool) -> Result<Self> {
        let front = scene.mirror.plane.signed_distance(&scene.sensor.position()).signum();
        Ok(Self {
            boxes: &scene.boxes,
            capsules: scene.capsules()?,
            mirror: mirror_enabled.then_some((&scene.mirror, front)),
        })
    }

    fn nearest(&self, ray: &Ray, with_mirror: bool) -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        let mut best_t = f64::INFINITY;
        if ray.dir.z < 0.0 {
            if let Some(t) = ray_plane(ray, &Vector3::z(), 0.0) {
                best_t = t;
                best = Some(Nearest::Solid(Surface::Ground, t));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = ray_oriented_box(ray, &b.center(), &b.half_extents(), b.yaw) {
                if t < best_t {
                    best_t = t;
                    best = Some(Nearest::Solid(Surface::Box(i), t));
                }
            }
        }
        for (i, c) in self.capsules.iter().enumerate() {
            if let Some(t) = ray_capsule(ray, &c.p0, &c.p1, c.radius) {
                if t < best_t {
                    best_t = t;
                    best = Some(Nearest::Solid(Surface::Arm(i), t));
                }
            }
        }
        if with_mirror {
            if let Some((m, _)) = self.mirror {
                if let Some(t) = ray_plane(ray, &m.plane.normal(), m.plane.offset()) {
                    if t < best_t && m.contains_on_plane(&ray.at(t)) {
                        best = Some(Nearest::Mirror(t));
                    }
                }
            }
        }
        best
    }

    /// Follows `ray` through at most one mirror bounce.
    pub fn trace(&self, ray: &Ray) -> Option<TraceHit> {
        match self.nearest(ray, true)? {
            Nearest::Solid(surface, t) => Some(TraceHit {
                surface,
                point: ray.at(t),
                range: t,
                mirror_hit: None,
            }),
            Nearest::Mirror(t) => {
                let (m, front) = self.mirror?;
                let n = m.plane.normal();
                // back face and edges absorb
                if front * n.dot(&ray.dir) >= 0.0 {
                    return None;
                }
                let hit = ray.at(t);
                let bounced = Ray::new(hit, ray.dir - 2.0 * ray.dir.dot(&n) * n);
                match self.nearest(&bounced, true)? {
                    Nearest::Solid(surface, t2) => Some(TraceHit {
                        surface,
                        point: bounced.at(t2),
                        range: t + t2,
                        mirror_hit: Some(hit),
                    }),
                    Nearest::Mirror(_) => None,
                }
            }
        }
    }

    /// Whether the segment `from -> to` is free of solid obstacles (the mirror is ignored).
    pub fn segment_clear(&self, from: &Point3<f64>, to: &Point3<f64>, slack: f64) -> bool {
        let delta = to - from;
        let len = delta.norm();
        if len <= slack {
            return true;
        }
        let ray = Ray::new(*from, delta);
        match self.nearest(&ray, false) {
            Some(Nearest::Solid(_, t)) => t >= len - slack,
            _ => true,
        }
    }
}

/// Renders the scene from the rig tilted by `theta`.
pub fn render(
    scene: &SceneModel,
    theta: f64,
    noise: &NoiseModel,
    intrinsics: &CameraIntrinsics,
) -> Result<Capture> {
    let pose = scene.sensor.world_from_tilted(theta)?;
    let mut capture = render_from_pose(scene, &pose, true, scene.mirror.reflectance, noise, intrinsics)?;
    capture.tilt_angle = theta;
    Ok(capture)
}

/// Renders from an arbitrary (possibly improper) camera pose.
///
/// With `mirror_enabled = false` the mirror patch is absent, which is how a
/// physical second sensor standing at the mirror image of the first sees the
/// workcell. `reflectance` sets the per-bounce attenuation of mirror returns.
pub fn render_from_pose(
    scene: &SceneModel,
    world_from_camera: &HomogeneousTransform,
    mirror_enabled: bool,
    reflectance: f64,
    noise: &NoiseModel,
    intrinsics: &CameraIntrinsics,
) -> Result<Capture> {
    intrinsics.validate()?;
    noise.validate()?;
    let tracer = Tracer::new(scene, mirror_enabled)?;
    let origin = world_from_camera.transform_point(&Point3::origin());
    let mut capture = Capture::empty(0.0, intrinsics);
    capture.world_from_camera = *world_from_camera;
    let mirror_attenuation = reflectance * reflectance;

    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let pixel = v * intrinsics.width + u;
            let dir_cam = intrinsics.pixel_direction(u, v);
            let ray = Ray::new(origin, world_from_camera.transform_vector(&dir_cam));
            let Some(hit) = tracer.trace(&ray) else {
                continue;
            };
            let attenuation = if hit.mirror_hit.is_some() {
                mirror_attenuation
            } else {
                1.0
            };
            if noise.signal(hit.range, attenuation) < noise.dropout_threshold {
                continue;
            }
            let mut range = hit.range;
            let sigma = noise.sigma(hit.range);
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut noise.pixel_rng(pixel));
                range += sigma * z;
            }
            if !(range > 0.0) {
                continue;
            }
            capture.depth_image[pixel] = range;
            capture.cloud.push(Point3::from(dir_cam * range), hit.mirror_hit.is_some());
            capture.returns.push(ReturnInfo {
                pixel,
                surface: hit.surface,
                true_range: hit.range,
                surface_point: hit.point,
                mirror_hit: hit.mirror_hit,
            });
        }
    }
    Ok(capture)
}
