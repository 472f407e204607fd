//! Workcell model: ground, cardboard boxes, a two-link arm, the mirror and the sensor rig.

use nalgebra::{Point2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle, householder_from_plane, HomogeneousTransform, Plane, SensorRig};

/// Sensor height above the ground in the reference workcell.
pub const DEFAULT_SENSOR_HEIGHT: f64 = 2.1;
/// Horizontal distance from the sensor to the mirror plane.
pub const DEFAULT_MIRROR_DISTANCE: f64 = 1.2;
pub const DEFAULT_REFLECTANCE: f64 = 0.9;
pub const DEFAULT_TILT_RADIUS: f64 = 0.06;
/// Margin added above the tallest box when no threshold is configured.
pub const HEIGHT_MARGIN: f64 = 0.05;
pub const DEFAULT_OBJECT_HEIGHT: f64 = 0.15;

/// A cardboard box resting flat on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub center: [f64; 3],
    /// Width (local x), depth (local y), height.
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl SceneBox {
    /// Box of `size` standing on the ground at `(x, y)`.
    pub fn on_ground(x: f64, y: f64, size: [f64; 3], yaw: f64) -> Self {
        Self {
            center: [x, y, size[2] / 2.0],
            size,
            yaw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::Validation("box size components must be > 0".into()));
        }
        if !self.center.iter().all(|v| v.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::Validation("box pose must be finite".into()));
        }
        if self.center[2] - self.size[2] / 2.0 < -1e-9 {
            return Err(Error::Validation("box extends below the ground".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.center)
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::from(self.size) / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.size[2] / 2.0
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [Point2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hw, hd) = (self.size[0] / 2.0, self.size[1] / 2.0);
        let ex = Vector2::new(c, s) * hw;
        let ey = Vector2::new(-s, c) * hd;
        let ctr = Point2::new(self.center[0], self.center[1]);
        [ctr - ex - ey, ctr + ex - ey, ctr + ex + ey, ctr - ex + ey]
    }

    /// Whether `p` lies inside or on the box, within `tol`.
    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        self.signed_distance(p) <= tol
    }

    /// Signed distance to the box surface, negative inside.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        let (s, c) = self.yaw.sin_cos();
        let rel = p - self.center();
        let local = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
        let q = local.abs() - self.half_extents();
        let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        outside + q.x.max(q.y).max(q.z).min(0.0)
    }

    pub fn distance_to_surface(&self, p: &Point3<f64>) -> f64 {
        self.signed_distance(p).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub p0: Point3<f64>,
    pub p1: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn distance_to_surface(&self, p: &Point3<f64>) -> f64 {
        (crate::raycast::point_segment_distance(p, &self.p0, &self.p1) - self.radius).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Joint {
    Shoulder,
    Elbow,
}

impl Joint {
    pub fn index(self) -> usize {
        match self {
            Joint::Shoulder => 0,
            Joint::Elbow => 1,
        }
    }
}

fn default_limits() -> [[f64; 2]; 2] {
    [[-FRAC_PI_2, FRAC_PI_2]; 2]
}

/// Planar two-link arm on a yawing base.
///
/// The shoulder angle is measured up from the horizontal heading; the elbow
/// bends the forearm down by its angle relative to the upper arm, so
/// `shoulder = elbow = 90 deg` leaves the forearm horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub base: [f64; 2],
    #[serde(default)]
    pub base_yaw: f64,
    /// Upper arm, forearm.
    pub link_lengths: [f64; 2],
    pub link_radius: f64,
    /// Shoulder, elbow.
    pub joint_angles: [f64; 2],
    #[serde(default = "default_limits")]
    pub joint_limits: [[f64; 2]; 2],
}

impl ArmModel {
    pub fn heading(&self) -> Vector3<f64> {
        Vector3::new(self.base_yaw.cos(), self.base_yaw.sin(), 0.0)
    }

    pub fn with_joints(&self, joint_angles: [f64; 2]) -> Self {
        Self {
            joint_angles,
            ..*self
        }
    }

    pub fn with_joint(&self, joint: Joint, angle: f64) -> Self {
        let mut out = *self;
        out.joint_angles[joint.index()] = angle;
        out
    }

    pub fn validate(&self) -> Result<()> {
        arm_capsules(self).map(|_| ())
    }

    /// Shoulder, elbow and wrist positions.
    pub fn joint_positions(&self) -> [Point3<f64>; 3] {
        let heading = self.heading();
        let up = Vector3::z();
        let [shoulder, elbow] = self.joint_angles;
        let fore_angle = shoulder - elbow;
        let p0 = Point3::new(self.base[0], self.base[1], 0.0);
        let p1 = p0 + (heading * shoulder.cos() + up * shoulder.sin()) * self.link_lengths[0];
        let p2 = p1 + (heading * fore_angle.cos() + up * fore_angle.sin()) * self.link_lengths[1];
        [p0, p1, p2]
    }
}

/// Upper-arm and forearm capsules of `arm` from planar forward kinematics.
///
/// Fails on non-positive dimensions, joint angles outside the limits, or a
/// link axis dipping below the ground.
pub fn arm_capsules(arm: &ArmModel) -> Result<[Capsule; 2]> {
    if !(arm.link_lengths.iter().all(|&l| l > 0.0) && arm.link_radius > 0.0) {
        return Err(Error::InvalidPose("link lengths and radius must be > 0".into()));
    }
    for (i, (angle, [lo, hi])) in arm.joint_angles.iter().zip(arm.joint_limits).enumerate() {
        if !angle.is_finite() || *angle < lo - 1e-12 || *angle > hi + 1e-12 {
            let name = if i == 0 { "shoulder" } else { "elbow" };
            return Err(Error::InvalidPose(format!(
                "{name} angle {angle:.4} outside [{lo:.4}, {hi:.4}]"
            )));
        }
    }
    let [p0, p1, p2] = arm.joint_positions();
    if p1.z < -1e-9 || p2.z < -1e-9 {
        return Err(Error::InvalidPose("arm passes below the ground".into()));
    }
    let r = arm.link_radius;
    Ok([
        Capsule { p0, p1, radius: r },
        Capsule {
            p0: p1,
            p1: p2,
            radius: r,
        },
    ])
}

/// Rectangular planar mirror.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorPatch {
    pub plane: Plane,
    pub center: [f64; 3],
    pub width: f64,
    pub height: f64,
    pub reflectance: f64,
}

impl MirrorPatch {
    pub fn validate(&self) -> Result<()> {
        let residual = self.plane.signed_distance(&self.center());
        if residual.abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "mirror.center is {residual:.3e} m off the mirror plane"
            )));
        }
        if !(self.reflectance > 0.0 && self.reflectance <= 1.0) {
            return Err(Error::Validation(format!(
                "mirror.reflectance must be in (0, 1], got {}",
                self.reflectance
            )));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Validation("mirror width and height must be > 0".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.center)
    }

    /// In-plane unit axes: horizontal (along width) and the remaining one (along height).
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.plane.normal();
        let mut u = n.cross(&Vector3::z());
        if u.norm() < 1e-9 {
            u = Vector3::x();
        }
        let u = u.normalize();
        let v = n.cross(&u).normalize();
        (u, v)
    }

    /// Whether a point on the plane falls within the rectangle.
    pub fn contains_on_plane(&self, p: &Point3<f64>) -> bool {
        let (u, v) = self.axes();
        let rel = p - self.center();
        rel.dot(&u).abs() <= self.width / 2.0 && rel.dot(&v).abs() <= self.height / 2.0
    }

    pub fn transform(&self) -> HomogeneousTransform {
        householder_from_plane(&self.plane)
    }

    /// Mirror rotated by `angle` radians about its horizontal in-plane axis through its center.
    pub fn tilted(&self, angle: f64) -> MirrorPatch {
        let (u, _) = self.axes();
        let n = axis_angle(&u, angle) * self.plane.normal();
        let plane = Plane::from_normal_point(n, self.center())
            .expect("rotated unit normal")
            .canonical();
        MirrorPatch { plane, ..*self }
    }
}

/// Axis-aligned work area on the ground where boxes are placed and detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: [-0.6, -0.5],
            max: [0.8, 0.5],
        }
    }
}

impl Workspace {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub boxes: Vec<SceneBox>,
    pub arm: Option<ArmModel>,
    pub mirror: MirrorPatch,
    pub sensor: SensorRig,
    pub height_threshold: f64,
    pub expected_robots: usize,
    pub workspace: Workspace,
    /// Expected height of the hidden objects, used to aim reflection sensing.
    pub expected_object_height: f64,
}

pub fn default_sensor() -> SensorRig {
    SensorRig {
        position: [0.0, 0.0, DEFAULT_SENSOR_HEIGHT],
        tilt_radius: DEFAULT_TILT_RADIUS,
        tilt_angle: 0.0,
    }
}

/// Vertical mirror facing the sensor, `DEFAULT_MIRROR_DISTANCE` along `+X`.
pub fn default_mirror(sensor: &SensorRig) -> MirrorPatch {
    let x = sensor.position[0] + DEFAULT_MIRROR_DISTANCE;
    MirrorPatch {
        plane: Plane::new(1.0, 0.0, 0.0, -x).expect("unit normal"),
        center: [x, sensor.position[1], 1.0],
        width: 1.8,
        height: 1.3,
        reflectance: DEFAULT_REFLECTANCE,
    }
}

pub fn default_threshold(boxes: &[SceneBox]) -> f64 {
    boxes.iter().map(SceneBox::top).fold(0.0, f64::max) + HEIGHT_MARGIN
}

impl SceneModel {
    /// Scene with default sensor, mirror and workspace around `boxes`.
    pub fn with_defaults(boxes: Vec<SceneBox>, arm: Option<ArmModel>) -> Self {
        let sensor = default_sensor();
        Self {
            height_threshold: default_threshold(&boxes),
            boxes,
            arm,
            mirror: default_mirror(&sensor),
            sensor,
            expected_robots: 1,
            workspace: Workspace::default(),
            expected_object_height: DEFAULT_OBJECT_HEIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.boxes {
            b.validate()?;
        }
        if let Some(arm) = &self.arm {
            arm.validate()?;
        }
        self.mirror.validate()?;
        self.sensor.validate()?;
        if self.expected_robots < 1 {
            return Err(Error::Validation("expected_robots must be >= 1".into()));
        }
        let tallest = self.boxes.iter().map(SceneBox::top).fold(0.0, f64::max);
        if !(self.height_threshold > tallest) {
            return Err(Error::Validation(format!(
                "height_threshold {} must exceed the tallest box ({tallest})",
                self.height_threshold
            )));
        }
        if !(self.expected_object_height > 0.0) {
            return Err(Error::Validation("expected_object_height must be > 0".into()));
        }
        if self.mirror.plane.signed_distance(&self.sensor.position()).abs() < 1e-6 {
            return Err(Error::Validation("sensor lies on the mirror plane".into()));
        }
        Ok(())
    }

    pub fn capsules(&self) -> Result<Vec<Capsule>> {
        match &self.arm {
            Some(arm) => Ok(arm_capsules(arm)?.to_vec()),
            None => Ok(Vec::new()),
        }
    }

    pub fn with_arm(&self, arm: Option<ArmModel>) -> Self {
        Self {
            arm,
            ..self.clone()
        }
    }

    pub fn with_mirror(&self, mirror: MirrorPatch) -> Self {
        Self {
            mirror,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Validation(format!(
                "difficulty must be `easy` or `hard`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

/// Minimum gap between generated box footprints.
pub const BOX_CLEARANCE: f64 = 0.06;
const PLACEMENT_TRIES: usize = 400;
const PLACEMENT_ROUNDS: usize = 20;
const ARM_TRIES: usize = 64;
const ARM_BASE_OFFSET: f64 = 0.75;

/// Separating-axis overlap test between two box footprints inflated by `clearance / 2`.
pub fn footprints_overlap(a: &SceneBox, b: &SceneBox, clearance: f64) -> bool {
    let grow = |bx: &SceneBox| SceneBox {
        size: [bx.size[0] + clearance, bx.size[1] + clearance, bx.size[2]],
        ..*bx
    };
    let (pa, pb) = (grow(a).footprint(), grow(b).footprint());
    for poly in [&pa, &pb] {
        for i in 0..4 {
            let edge = poly[(i + 1) % 4] - poly[i];
            let axis = Vector2::new(-edge.y, edge.x);
            let proj = |pts: &[Point2<f64>; 4]| {
                pts.iter().map(|p| p.coords.dot(&axis)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
            };
            let (a0, a1) = proj(&pa);
            let (b0, b1) = proj(&pb);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

/// Pose the arm so its forearm crosses over the top of `target`, reaching from `base`.
///
/// Elbow-up inverse kinematics places the wrist `overshoot` beyond the box
/// center at height `tip_height`.
pub fn pose_arm_over(
    template: &ArmModel,
    base: [f64; 2],
    target: &SceneBox,
    overshoot: f64,
    tip_height: f64,
) -> Result<ArmModel> {
    let dx = target.center[0] - base[0];
    let dy = target.center[1] - base[1];
    let reach = (dx * dx + dy * dy).sqrt() + overshoot;
    let [l1, l2] = template.link_lengths;
    let dist = (reach * reach + tip_height * tip_height).sqrt();
    let cos_inner = (l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist);
    if !(cos_inner.abs() <= 1.0) {
        return Err(Error::InvalidPose("target out of reach".into()));
    }
    let shoulder = tip_height.atan2(reach) + cos_inner.acos();
    let elbow_x = l1 * shoulder.cos();
    let elbow_z = l1 * shoulder.sin();
    let fore = (tip_height - elbow_z).atan2(reach - elbow_x);
    let arm = ArmModel {
        base,
        base_yaw: dy.atan2(dx),
        joint_angles: [shoulder, shoulder - fore],
        ..*template
    };
    arm.validate()?;
    Ok(arm)
}

pub fn default_arm_template() -> ArmModel {
    ArmModel {
        base: [0.0, -1.2],
        base_yaw: FRAC_PI_2,
        link_lengths: [0.85, 0.8],
        link_radius: 0.06,
        joint_angles: [FRAC_PI_2, FRAC_PI_2],
        joint_limits: default_limits(),
    }
}

fn place_boxes(rng: &mut ChaCha8Rng, count: usize, workspace: &Workspace) -> Option<Vec<SceneBox>> {
    let mut boxes: Vec<SceneBox> = Vec::with_capacity(count);
    for _ in 0..PLACEMENT_TRIES {
        if boxes.len() == count {
            break;
        }
        let size = [
            rng.random_range(0.20..0.36),
            rng.random_range(0.15..0.26),
            rng.random_range(0.08..0.25),
        ];
        let yaw = rng.random_range(-PI / 6.0..PI / 6.0);
        let x = rng.random_range(workspace.min[0]..workspace.max[0]);
        let y = rng.random_range(workspace.min[1]..workspace.max[1]);
        let candidate = SceneBox::on_ground(x, y, size, yaw);
        let inside = candidate
            .footprint()
            .iter()
            .all(|c| workspace.contains(c.x, c.y));
        if inside && boxes.iter().all(|b| !footprints_overlap(b, &candidate, BOX_CLEARANCE)) {
            boxes.push(candidate);
        }
    }
    (boxes.len() == count).then_some(boxes)
}

/// Random workcell: 1-3 boxes (easy) or 4-6 boxes (hard) with the arm posed over one of them.
pub fn randomized_scene(seed: u64, difficulty: Difficulty) -> Result<SceneModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = match difficulty {
        Difficulty::Easy => rng.random_range(1..=3),
        Difficulty::Hard => rng.random_range(4..=6),
    };
    let workspace = Workspace::default();
    let boxes = (0..PLACEMENT_ROUNDS)
        .find_map(|_| place_boxes(&mut rng, count, &workspace))
        .ok_or_else(|| {
            Error::Generation(format!(
                "could not place {count} boxes in {PLACEMENT_ROUNDS} rounds"
            ))
        })?;

    let target = boxes[rng.random_range(0..boxes.len())];
    let template = default_arm_template();
    // the base stands outside the workspace on the side nearer the target
    let base_y = if target.center[1] > workspace.center()[1] {
        workspace.max[1] + ARM_BASE_OFFSET
    } else {
        workspace.min[1] - ARM_BASE_OFFSET
    };
    let sensor = default_sensor().position();
    let mut arm = None;
    for _ in 0..ARM_TRIES {
        let base_x = target.center[0] + rng.random_range(-0.2..0.2);
        let half_diag = (target.size[0].powi(2) + target.size[1].powi(2)).sqrt() / 2.0;
        let overshoot = half_diag + rng.random_range(0.03..0.12);
        let tip_height = target.top() + rng.random_range(0.3..0.5);
        // cross the sight line from the sensor to the top center at the arm's height
        let k = (tip_height - target.top()) / (sensor.z - target.top());
        let aim = SceneBox {
            center: [
                target.center[0] + (sensor.x - target.center[0]) * k,
                target.center[1] + (sensor.y - target.center[1]) * k,
                target.center[2],
            ],
            ..target
        };
        if let Ok(a) = pose_arm_over(&template, [base_x, base_y], &aim, overshoot, tip_height) {
            arm = Some(a);
            break;
        }
    }
    let arm = arm.ok_or_else(|| Error::Generation("no valid arm pose over the target box".into()))?;
    let mut scene = SceneModel::with_defaults(boxes, Some(arm));
    scene.workspace = workspace;
    scene.validate()?;
    Ok(scene)
}
