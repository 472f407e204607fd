//! Sensing strategies and their scoring against the generating scene.

use nalgebra::{Point3, Vector3};
use std::fmt;
use std::str::FromStr;

use crate::detection::{match_detections, DetectedBox, MatchCounts};
use crate::error::{Error, Result};
use crate::geometry::{Frame, HomogeneousTransform, PointCloud};
use crate::pipeline::{
    aim_target, coverage, detect_in_workspace, fuse, realize_capture, reflect_noise, run_pipeline_with, tilt_aim,
    OcclusionRegion, PipelineParams, TiltAim, DEFAULT_COVERAGE_RADIUS,
};
use crate::scene::SceneModel;
use crate::sensor::{render, render_from_pose, Capture, NoiseModel, Tracer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Direct,
    Mirror,
    DirectMirror,
    TwoSensor,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Direct, Strategy::Mirror, Strategy::DirectMirror, Strategy::TwoSensor];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::Mirror => "mirror",
            Strategy::DirectMirror => "direct+mirror",
            Strategy::TwoSensor => "two-sensor",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}` (expected direct, mirror, direct+mirror, two-sensor)")))
    }
}

/// Spacing of the reference surface samples.
pub const REFERENCE_SPACING: f64 = 0.005;

/// Camera pose of the second sensor: the mirror image of the rig tilted by `theta`.
pub fn two_sensor_pose(scene: &SceneModel, theta: f64) -> Result<HomogeneousTransform> {
    Ok(scene.mirror.transform() * scene.sensor.world_from_tilted(theta)?)
}

fn face_samples(origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>, normal: Vector3<f64>, out: &mut Vec<(Point3<f64>, Vector3<f64>)>) {
    let (nu, nv) = (
        (u.norm() / REFERENCE_SPACING).ceil().max(1.0) as usize,
        (v.norm() / REFERENCE_SPACING).ceil().max(1.0) as usize,
    );
    for i in 0..nu {
        for j in 0..nv {
            let p = origin + u * ((i as f64 + 0.5) / nu as f64) + v * ((j as f64 + 0.5) / nv as f64);
            out.push((p, normal));
        }
    }
}

/// Surface samples (top and sides) with outward normals of the boxes listed in `which`.
pub fn box_surface_samples(scene: &SceneModel, which: &[usize]) -> Vec<(Point3<f64>, Vector3<f64>)> {
    let mut out = Vec::new();
    for b in which.iter().map(|&i| &scene.boxes[i]) {
        let (s, c) = b.yaw.sin_cos();
        let ex = Vector3::new(c, s, 0.0);
        let ey = Vector3::new(-s, c, 0.0);
        let h = b.half_extents();
        let ctr = b.center();
        let (ax, ay, az) = (ex * h.x, ey * h.y, Vector3::z() * h.z);
        face_samples(ctr + az - ax - ay, ax * 2.0, ay * 2.0, Vector3::z(), &mut out);
        face_samples(ctr + ax - ay - az, ay * 2.0, az * 2.0, ex, &mut out);
        face_samples(ctr - ax - ay - az, ay * 2.0, az * 2.0, -ex, &mut out);
        face_samples(ctr + ay - ax - az, ax * 2.0, az * 2.0, ey, &mut out);
        face_samples(ctr - ay - ax - az, ax * 2.0, az * 2.0, -ey, &mut out);
    }
    out
}

fn visible_from(
    tracer: &Tracer<'_>,
    pose: &HomogeneousTransform,
    params: &PipelineParams,
    p: &Point3<f64>,
    n: &Vector3<f64>,
) -> bool {
    let eye = pose.transform_point(&Point3::origin());
    let to_eye = eye - p;
    if n.dot(&to_eye) <= 0.0 {
        return false;
    }
    let local = pose.inverse().transform_vector(&(p - eye));
    params.intrinsics.project(&local).is_some() && tracer.segment_clear(&eye, p, 1e-5)
}

/// Boxes whose top face is partly hidden from the untilted sensor.
///
/// These are the objects reflection sensing is meant to recover; when nothing
/// is hidden every box counts.
pub fn target_boxes(scene: &SceneModel) -> Result<Vec<usize>> {
    let tracer = Tracer::new(scene, false)?;
    let eye = scene.sensor.world_from_tilted(0.0)?.transform_point(&Point3::origin());
    let all: Vec<usize> = (0..scene.boxes.len()).collect();
    let hidden: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| {
            box_surface_samples(scene, &[i])
                .iter()
                .any(|(p, n)| n.z > 0.5 && !tracer.segment_clear(&eye, p, 1e-5))
        })
        .collect();
    Ok(if hidden.is_empty() { all } else { hidden })
}

/// Top-face points of the target boxes seen by the direct sensor or by the second sensor of the two-sensor oracle.
pub fn reference_cloud(scene: &SceneModel, theta: f64, params: &PipelineParams) -> Result<PointCloud> {
    let tracer = Tracer::new(scene, false)?;
    let first = scene.sensor.world_from_tilted(0.0)?;
    let second = two_sensor_pose(scene, theta)?;
    let mut cloud = PointCloud::new(Frame::World);
    for (p, n) in box_surface_samples(scene, &target_boxes(scene)?) {
        if n.z < 0.5 {
            continue;
        }
        if visible_from(&tracer, &first, params, &p, &n) || visible_from(&tracer, &second, params, &p, &n) {
            cloud.push(p, false);
        }
    }
    Ok(cloud)
}

/// Score of one strategy on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub theta: f64,
    pub direct_points: usize,
    pub mirror_points: usize,
    pub coverage: f64,
    pub matches_50: MatchCounts,
    pub matches_75: MatchCounts,
    pub detections: Vec<DetectedBox>,
    /// World-frame cloud the strategy scored.
    pub cloud: PointCloud,
}

/// Everything measured on one scene.
#[derive(Debug, Clone)]
pub struct SceneEvaluation {
    pub theta: f64,
    pub aim: Option<TiltAim>,
    pub occlusions: Vec<OcclusionRegion>,
    pub reference_points: usize,
    pub reports: Vec<StrategyReport>,
    pub warning: Option<String>,
    pub direct: Capture,
    /// Reflection capture at `theta`.
    pub reflect: Capture,
}

impl SceneEvaluation {
    pub fn report(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.reports.iter().find(|r| r.strategy == strategy)
    }
}

/// Aim at the workspace center at half the expected object height, used when no occlusion is found.
pub fn fallback_aim(scene: &SceneModel) -> Result<TiltAim> {
    let region = OcclusionRegion {
        cells: Vec::new(),
        area: 0,
        centroid: scene.workspace.center(),
    };
    tilt_aim(&scene.sensor, &aim_target(scene, &region), &scene.mirror.transform())
}

/// Runs the adaptive pipeline once and scores each requested strategy.
///
/// When the pipeline finds no reachable occlusion, mirror-based strategies
/// aim at the workspace center instead.
pub fn evaluate_scene(
    scene: &SceneModel,
    noise: &NoiseModel,
    strategies: &[Strategy],
    params: &PipelineParams,
) -> Result<SceneEvaluation> {
    let out = run_pipeline_with(scene, noise, params)?;
    let h_m = scene.mirror.transform();
    let (aim, reflect) = match (out.aim, out.reflect.clone()) {
        (Some(a), Some(r)) => (a, r),
        _ => {
            let a = fallback_aim(scene)?;
            (a, render(scene, a.theta, &reflect_noise(noise), &params.intrinsics)?)
        }
    };
    let theta = aim.theta;
    let reference = reference_cloud(scene, theta, params)?;
    let truth: Vec<DetectedBox> = scene.boxes.iter().map(DetectedBox::from).collect();

    let direct_world = realize_capture(&out.direct, &scene.sensor, &h_m)?;
    let mut reports = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let (cloud, theta_used) = match strategy {
            Strategy::Direct => (direct_world.clone(), 0.0),
            Strategy::Mirror => (realize_capture(&reflect, &scene.sensor, &h_m)?, theta),
            Strategy::DirectMirror => (fuse(&out.direct, &reflect, &scene.sensor, &h_m)?.cloud, theta),
            Strategy::TwoSensor => {
                let second = second_sensor_capture(scene, theta, noise, params)?;
                let mut cloud = direct_world.clone();
                cloud.extend(&second.world_cloud())?;
                (cloud, theta)
            }
        };
        let detections = detect_in_workspace(scene, &cloud, params)?;
        let mirror_points = cloud.mirror_count();
        reports.push(StrategyReport {
            strategy,
            theta: theta_used,
            direct_points: cloud.len() - mirror_points,
            mirror_points,
            coverage: if reference.is_empty() {
                1.0
            } else {
                coverage(&cloud, &reference, DEFAULT_COVERAGE_RADIUS)?
            },
            matches_50: match_detections(&detections, &truth, 0.5),
            matches_75: match_detections(&detections, &truth, 0.75),
            detections,
            cloud,
        });
    }
    Ok(SceneEvaluation {
        theta,
        aim: Some(aim),
        occlusions: out.occlusions,
        reference_points: reference.len(),
        reports,
        warning: out.warning,
        direct: out.direct,
        reflect,
    })
}

/// Capture of the oracle's second sensor: mirror-image pose, no mirror in the world.
pub fn second_sensor_capture(
    scene: &SceneModel,
    theta: f64,
    noise: &NoiseModel,
    params: &PipelineParams,
) -> Result<Capture> {
    let pose = two_sensor_pose(scene, theta)?;
    let mut cap = render_from_pose(scene, &pose, false, 1.0, &reflect_noise(noise), &params.intrinsics)?;
    cap.tilt_angle = theta;
    Ok(cap)
}
