//! Mirror displacement calibration with the robot arm as the calibration target.
//!
//! A greedy joint sweep picks the arm pose that shows the most arm points
//! directly and through the mirror; the mirror-imaged arm points are then
//! registered to the directly sensed ones and the alignment is projected back
//! onto the set of pure reflections.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle, householder_from_plane, nearest_reflection_plane, Frame, HomogeneousTransform, Plane, PointCloud,
    TransformKind, REFLECTION_TOL,
};
use crate::pipeline::{realize_capture, tilt_aim};
use crate::scene::{ArmModel, Joint, SceneModel};
use crate::seed;
use crate::sensor::{render, CameraIntrinsics, NoiseModel};
use crate::spatial::{estimate_normals, voxel_downsample, OccupancyField, VoxelIndex};

/// Weight of reflection points in the point-count criterion.
pub const DEFAULT_WEIGHT: f64 = 2.0;

/// Point-count criterion `n_direct + w * n_reflect`.
pub fn n_points(n_direct: usize, n_reflect: usize, w: f64) -> f64 {
    n_direct as f64 + w * n_reflect as f64
}

fn check_world(cloud: &PointCloud) -> Result<()> {
    if cloud.frame != Frame::World {
        return Err(Error::FrameMismatch {
            expected: Frame::World,
            found: cloud.frame,
        });
    }
    Ok(())
}

/// Arm points above the height threshold: all direct points, and the mirror points of the reflection cloud.
pub fn arm_point_counts(direct: &PointCloud, reflect: &PointCloud, height_threshold: f64) -> Result<(usize, usize)> {
    check_world(direct)?;
    check_world(reflect)?;
    let n_direct = direct.points.iter().filter(|p| p.z > height_threshold).count();
    let n_reflect = reflect
        .iter()
        .filter(|(p, via_mirror)| *via_mirror && p.z > height_threshold)
        .count();
    Ok((n_direct, n_reflect))
}

/// Joints to sweep, largest first, with the angles tried for each.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSearchSpace {
    pub joints: Vec<Joint>,
    pub angle_grid: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl Default for PoseSearchSpace {
    /// Shoulder then elbow, ten angles each.
    fn default() -> Self {
        Self {
            joints: vec![Joint::Shoulder, Joint::Elbow],
            angle_grid: vec![
                linspace(0.0, 80f64.to_radians(), 10),
                linspace(-90f64.to_radians(), 90f64.to_radians(), 10),
            ],
        }
    }
}

impl PoseSearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() || self.joints.len() != self.angle_grid.len() {
            return Err(Error::Validation("pose search needs one angle grid per joint".into()));
        }
        if self.angle_grid.iter().any(Vec::is_empty) {
            return Err(Error::Validation("every joint needs at least one angle".into()));
        }
        Ok(())
    }

    pub fn capture_count(&self) -> usize {
        self.angle_grid.iter().map(Vec::len).sum()
    }
}

/// Shared settings of calibration captures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSetup {
    /// Tilt of the reflection capture.
    pub theta: f64,
    pub intrinsics: CameraIntrinsics,
    pub weight: f64,
}

impl CalibrationSetup {
    /// Reflection capture aimed at the workspace center at the height threshold.
    pub fn for_scene(scene: &SceneModel) -> Result<Self> {
        let c = scene.workspace.center();
        let target = Point3::new(c[0], c[1], scene.height_threshold);
        let aim = tilt_aim(&scene.sensor, &target, &scene.mirror.transform())?;
        Ok(Self {
            theta: aim.theta,
            intrinsics: CameraIntrinsics::default(),
            weight: DEFAULT_WEIGHT,
        })
    }
}

/// World-frame direct points and virtual (unrealized) mirror points of one capture pair.
#[derive(Debug, Clone)]
pub struct CapturePair {
    pub direct: PointCloud,
    /// Reflection capture in the world frame, mirror points left on the virtual side.
    pub reflect_virtual: PointCloud,
}

/// Renders a direct and a reflection capture of `scene`.
pub fn capture_pair(scene: &SceneModel, setup: &CalibrationSetup, noise: &NoiseModel) -> Result<CapturePair> {
    let direct = render(scene, 0.0, noise, &setup.intrinsics)?;
    let reflect = render(
        scene,
        setup.theta,
        &noise.with_seed(seed::derive(noise.seed, "reflect")),
        &setup.intrinsics,
    )?;
    let identity = HomogeneousTransform::identity();
    Ok(CapturePair {
        direct: realize_capture(&direct, &scene.sensor, &identity)?,
        reflect_virtual: realize_capture(&reflect, &scene.sensor, &identity)?,
    })
}

/// Arm points of a capture pair: direct points and virtual mirror points whose realization by
/// `h_init` lies above the height threshold.
pub fn arm_clouds(pair: &CapturePair, h_init: &HomogeneousTransform, height_threshold: f64) -> (PointCloud, PointCloud) {
    let direct = pair.direct.filtered(|p, via| !via && p.z > height_threshold);
    let reflect = pair
        .reflect_virtual
        .filtered(|p, via| via && h_init.transform_point(p).z > height_threshold);
    (direct, reflect)
}

fn pose_noise(noise: &NoiseModel, arm: &ArmModel) -> NoiseModel {
    let key = arm.joint_angles[0].to_bits() ^ arm.joint_angles[1].to_bits().rotate_left(32);
    noise.with_seed(seed::derive_indexed(noise.seed, "pose", key))
}

/// Point-count criterion of one arm pose, `None` when the pose is infeasible.
pub fn evaluate_pose(
    scene: &SceneModel,
    arm: &ArmModel,
    setup: &CalibrationSetup,
    noise: &NoiseModel,
) -> Result<Option<(usize, usize)>> {
    if crate::scene::arm_capsules(arm).is_err() {
        return Ok(None);
    }
    let posed = scene.with_arm(Some(*arm));
    let pair = capture_pair(&posed, setup, &pose_noise(noise, arm))?;
    let h = scene.mirror.transform();
    let (direct, reflect) = arm_clouds(&pair, &h, scene.height_threshold);
    Ok(Some((direct.len(), reflect.len())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSearchResult {
    pub arm: ArmModel,
    pub n_points: f64,
    pub n_direct: usize,
    pub n_reflect: usize,
    /// Capture pairs rendered during the sweep.
    pub captures: usize,
    /// Every evaluated pose: joint angles and criterion (`None` when infeasible).
    pub evaluations: Vec<([f64; 2], Option<f64>)>,
    /// No pose showed any arm point; the initial pose is returned.
    pub degenerate: bool,
}

/// Greedy per-joint sweep maximizing the point-count criterion.
///
/// Joints not yet swept start at zero. A joint keeps its current angle when no
/// grid angle improves on it.
pub fn find_optimal_pose(
    scene: &SceneModel,
    space: &PoseSearchSpace,
    noise: &NoiseModel,
    setup: &CalibrationSetup,
) -> Result<PoseSearchResult> {
    space.validate()?;
    let template = scene
        .arm
        .ok_or_else(|| Error::Validation("calibration needs an arm in the scene".into()))?;
    let mut arm = template.with_joints([0.0, 0.0]);
    let mut best: Option<(f64, usize, usize)> = None;
    let mut evaluations = Vec::new();
    let mut captures = 0;
    for (joint, grid) in space.joints.iter().zip(&space.angle_grid) {
        let mut choice = arm;
        for &angle in grid {
            let candidate = arm.with_joint(*joint, angle);
            let counts = evaluate_pose(scene, &candidate, setup, noise)?;
            captures += usize::from(counts.is_some());
            let value = counts.map(|(d, r)| n_points(d, r, setup.weight));
            evaluations.push((candidate.joint_angles, value));
            if let (Some(v), Some((d, r))) = (value, counts) {
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, d, r));
                    choice = candidate;
                }
            }
        }
        arm = choice;
    }
    let (value, n_direct, n_reflect) = best.unwrap_or((0.0, 0, 0));
    Ok(PoseSearchResult {
        arm,
        n_points: value,
        n_direct,
        n_reflect,
        captures,
        evaluations,
        degenerate: value <= 0.0,
    })
}

/// Registration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    pub voxel: f64,
    /// Correspondence gate of the RANSAC hypotheses.
    pub gate: f64,
    /// Correspondence gate of the ICP refinement.
    pub icp_gate: f64,
    pub inlier_threshold: f64,
    /// Neighborhood radius of the direct-point normals used by ICP.
    pub normal_radius: f64,
    pub ransac_iterations: usize,
    pub min_inlier_fraction: f64,
    pub icp_tolerance: f64,
    pub icp_max_iterations: usize,
    pub seed: u64,
    pub coarse: Option<CoarseSearch>,
    /// When set, only virtual points whose realization by the current estimate
    /// lies above this height take part.
    pub height_threshold: Option<f64>,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            voxel: 0.01,
            gate: 0.05,
            icp_gate: 0.01,
            inlier_threshold: 0.01,
            normal_radius: 0.03,
            ransac_iterations: 512,
            min_inlier_fraction: 0.3,
            icp_tolerance: 1e-7,
            icp_max_iterations: 60,
            seed: 0,
            coarse: Some(CoarseSearch::default()),
            height_threshold: None,
        }
    }
}

/// Grid over mirror planes near the prior, scored before correspondences are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseSearch {
    pub max_angle: f64,
    pub angle_step: f64,
    pub max_offset: f64,
    pub offset_step: f64,
    /// A realized point scores when a direct point lies within this distance.
    pub radius: f64,
    /// Virtual points scored per hypothesis, an even stride through the cloud.
    pub max_points: usize,
    /// Best coarse nodes refined at full resolution.
    pub refine_leaders: usize,
}

impl Default for CoarseSearch {
    fn default() -> Self {
        Self {
            max_angle: 10f64.to_radians(),
            angle_step: 1f64.to_radians(),
            max_offset: 0.1,
            offset_step: 0.01,
            radius: 0.015,
            max_points: 600,
            refine_leaders: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    /// Pure reflection.
    pub h_m: HomogeneousTransform,
    pub plane: Plane,
    pub inlier_fraction: f64,
    pub converged: bool,
    /// Mean residual of the final correspondences.
    pub residual: f64,
    pub icp_iterations: usize,
}

/// Least-squares proper rigid motion mapping `src` onto `dst` (Kabsch with det = +1).
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> HomogeneousTransform {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d.coords - cd) * (s.coords - cs).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let sign = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let r = u * fix * v_t;
    let t = cd - r * cs;
    HomogeneousTransform::from_parts(r, t).unwrap_or_else(|_| HomogeneousTransform::identity())
}

/// Nearest pure reflection to `h`.
pub fn project_to_reflection(h: &HomogeneousTransform) -> Result<(HomogeneousTransform, Plane)> {
    let (plane, _) = nearest_reflection_plane(h)?;
    let plane = plane.canonical();
    Ok((householder_from_plane(&plane), plane))
}

/// Gauss-Newton fit of a mirror plane mapping each virtual point onto its partner.
///
/// The plane is parameterized by two tangent rotations of the normal and the offset.
/// A pair with a partner normal contributes its point-to-plane distance, otherwise
/// the full point-to-point offset.
fn fit_reflection(
    pairs: &[(Point3<f64>, Point3<f64>)],
    normals: Option<&[Option<Vector3<f64>>]>,
    start: &Plane,
    iterations: usize,
) -> Option<Plane> {
    let mut n = start.normal();
    let mut d = start.offset();
    for _ in 0..iterations {
        let e1 = n.cross(&if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() }).normalize();
        let e2 = n.cross(&e1);
        let mut jtj = Matrix3::zeros();
        let mut jte = Vector3::zeros();
        for (i, (v, q)) in pairs.iter().enumerate() {
            let s = n.dot(&v.coords) + d;
            let e = v.coords - 2.0 * s * n - q.coords;
            let cols = [
                -2.0 * (e1.dot(&v.coords) * n + s * e1),
                -2.0 * (e2.dot(&v.coords) * n + s * e2),
                -2.0 * n,
            ];
            match normals.and_then(|ns| ns[i]) {
                Some(m) => {
                    let row = Vector3::new(m.dot(&cols[0]), m.dot(&cols[1]), m.dot(&cols[2]));
                    jtj += row * row.transpose();
                    jte += row * m.dot(&e);
                }
                None => {
                    for a in 0..3 {
                        jte[a] += cols[a].dot(&e);
                        for b in 0..3 {
                            jtj[(a, b)] += cols[a].dot(&cols[b]);
                        }
                    }
                }
            }
        }
        let damping = 1e-9 * jtj.trace().max(1e-12);
        jtj += Matrix3::identity() * damping;
        let step: Vector3<f64> = jtj.cholesky()?.solve(&(-jte));
        if !step.iter().all(|x| x.is_finite()) {
            return None;
        }
        n = (n + e1 * step[0] + e2 * step[1]).normalize();
        d += step[2];
    }
    Plane::new(n.x, n.y, n.z, d).ok()
}

fn sorted(points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
    v
}

fn coarse_plane(
    virtual_pts: &[Point3<f64>],
    direct_pts: &[Point3<f64>],
    prior: &Plane,
    search: &CoarseSearch,
) -> Result<Plane> {
    let field = OccupancyField::new(direct_pts, search.radius / 2.0, search.radius);
    let n0 = prior.normal();
    let u = {
        let h = n0.cross(&Vector3::z());
        if h.norm() > 1e-6 {
            h.normalize()
        } else {
            n0.cross(&Vector3::x()).normalize()
        }
    };
    let v = n0.cross(&u);
    // pivot: the prior plane point nearest the centroid of the virtual cloud
    let centroid = Point3::from(virtual_pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / virtual_pts.len() as f64);
    let pivot = prior.project(&centroid);
    let stride = virtual_pts.len().div_ceil(search.max_points.max(1));
    let subset: Vec<Point3<f64>> = virtual_pts.iter().step_by(stride.max(1)).copied().collect();
    let score = |a: f64, b: f64, off: f64| -> Result<(usize, Plane)> {
        let n = axis_angle(&v, b) * axis_angle(&u, a) * n0;
        let plane = Plane::from_normal_point(n, pivot + n0 * off)?;
        let h = householder_from_plane(&plane);
        Ok((subset.iter().filter(|p| field.contains(&h.transform_point(p))).count(), plane))
    };
    let grid = |center: f64, max: f64, step: f64| -> Vec<f64> {
        let k = (max / step).round() as i64;
        (-k..=k).map(|i| center + i as f64 * step).collect()
    };
    // every other grid node first, then the full resolution around the leaders
    let (a2, o2) = (2.0 * search.angle_step, 2.0 * search.offset_step);
    let mut nodes = Vec::new();
    for a in grid(0.0, search.max_angle, a2) {
        for b in grid(0.0, search.max_angle, a2) {
            for off in grid(0.0, search.max_offset, o2) {
                nodes.push((score(a, b, off)?.0, [a, b, off]));
            }
        }
    }
    // stable sort keeps grid order among equal scores
    nodes.sort_by(|x, y| y.0.cmp(&x.0));
    let mut best = (0usize, *prior);
    for &(_, [ca, cb, co]) in nodes.iter().take(search.refine_leaders.max(1)) {
        for a in grid(ca, a2, search.angle_step) {
            for b in grid(cb, a2, search.angle_step) {
                for off in grid(co, o2, search.offset_step) {
                    let (sc, plane) = score(a, b, off)?;
                    if sc > best.0 {
                        best = (sc, plane);
                    }
                }
            }
        }
    }
    Ok(best.1)
}

fn refine(
    virtual_pts: &[Point3<f64>],
    direct_pts: &[Point3<f64>],
    direct_normals: &[Option<Vector3<f64>>],
    index: &VoxelIndex,
    start: Plane,
    params: &RegistrationParams,
) -> Result<(Plane, f64, usize)> {
    let mut plane = start;
    let mut last = f64::INFINITY;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..params.icp_max_iterations {
        iterations += 1;
        let h = householder_from_plane(&plane);
        let mut matched = Vec::new();
        let mut normals = Vec::new();
        let mut sum = 0.0;
        for p in virtual_pts {
            let r = h.transform_point(p);
            if let Some((j, d)) = index.nearest_within(&r, params.icp_gate) {
                matched.push((*p, direct_pts[j]));
                normals.push(direct_normals[j]);
                sum += direct_normals[j].map_or(d, |m| m.dot(&(r - direct_pts[j])).abs());
            }
        }
        if matched.len() < 3 {
            return Err(Error::NoOverlap { found: matched.len() });
        }
        residual = sum / matched.len() as f64;
        if last - residual < params.icp_tolerance {
            break;
        }
        last = residual;
        match fit_reflection(&matched, Some(&normals), &plane, 1) {
            Some(p) => plane = p,
            None => break,
        }
    }
    Ok((plane, residual, iterations))
}

/// Reflection-constrained RANSAC + ICP alignment of virtual mirror points onto direct points.
///
/// `reflect_virtual` holds mirror points as recorded (not realized); `h_init`
/// is the prior mirror transform.
pub fn register(
    reflect_virtual: &PointCloud,
    direct: &PointCloud,
    h_init: &HomogeneousTransform,
    params: &RegistrationParams,
) -> Result<Registration> {
    check_world(reflect_virtual)?;
    check_world(direct)?;
    if h_init.kind() != TransformKind::Improper {
        return Err(Error::NotAReflection { residual: f64::INFINITY });
    }
    let all_virtual = sorted(&reflect_virtual.points);
    let select = |h: &HomogeneousTransform| -> Vec<Point3<f64>> {
        let kept: Vec<Point3<f64>> = match params.height_threshold {
            Some(thr) => all_virtual.iter().filter(|p| h.transform_point(p).z > thr).copied().collect(),
            None => all_virtual.clone(),
        };
        voxel_downsample(&kept, params.voxel)
    };
    let direct_pts = voxel_downsample(&sorted(&direct.points), params.voxel);
    let (prior_h, prior_plane) = project_to_reflection(h_init)?;
    let mut virtual_pts = select(&prior_h);
    if virtual_pts.len() < 3 || direct_pts.len() < 3 {
        return Err(Error::NoOverlap { found: virtual_pts.len().min(direct_pts.len()) });
    }
    let index = VoxelIndex::new(&direct_pts, params.gate);
    let direct_normals = estimate_normals(&direct_pts, params.normal_radius, 5);

    let mut h = prior_h;
    if let Some(search) = &params.coarse {
        h = householder_from_plane(&coarse_plane(&virtual_pts, &direct_pts, &prior_plane, search)?);
        virtual_pts = select(&h);
        if virtual_pts.len() < 3 {
            return Err(Error::NoOverlap { found: virtual_pts.len() });
        }
    }

    // correspondences after the starting realization
    let pairs: Vec<(Point3<f64>, Point3<f64>)> = virtual_pts
        .iter()
        .filter_map(|p| index.nearest_within(&h.transform_point(p), params.gate).map(|(j, _)| (*p, direct_pts[j])))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::NoOverlap { found: pairs.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let count_inliers = |pts: &[Point3<f64>], h: &HomogeneousTransform| {
        pts.iter()
            .filter(|p| index.any_within(&h.transform_point(p), params.inlier_threshold))
            .count()
    };
    let start = project_to_reflection(&h)?.1;
    let mut best_plane = start;
    let mut best_inliers = count_inliers(&virtual_pts, &h);
    for _ in 0..params.ransac_iterations {
        let idx = sample(&mut rng, pairs.len(), 3);
        let sample_pairs: Vec<(Point3<f64>, Point3<f64>)> = idx.iter().map(|i| pairs[i]).collect();
        let Some(plane) = fit_reflection(&sample_pairs, None, &start, 5) else {
            continue;
        };
        let inliers = count_inliers(&virtual_pts, &householder_from_plane(&plane));
        if inliers > best_inliers {
            best_inliers = inliers;
            best_plane = plane;
        }
    }

    // point-to-plane ICP over corrections that keep the estimate a reflection,
    // repeated while the selected arm points change
    let (mut plane, mut residual, mut iterations) = refine(&virtual_pts, &direct_pts, &direct_normals, &index, best_plane, params)?;
    for _ in 0..3 {
        let reselected = select(&householder_from_plane(&plane));
        if reselected == virtual_pts || reselected.len() < 3 {
            break;
        }
        virtual_pts = reselected;
        let (p, r, i) = refine(&virtual_pts, &direct_pts, &direct_normals, &index, plane, params)?;
        (plane, residual) = (p, r);
        iterations += i;
    }

    let (h_m, plane) = project_to_reflection(&householder_from_plane(&plane))?;
    let (_, check) = nearest_reflection_plane(&h_m)?;
    if check > REFLECTION_TOL {
        return Err(Error::NotAReflection { residual: check });
    }
    // distance to the direct surface: the point-to-plane distance to a nearby direct point
    let on_surface = |p: &Point3<f64>| {
        let r = h_m.transform_point(p);
        index
            .nearest_within(&r, 2.0 * params.inlier_threshold)
            .is_some_and(|(j, d)| direct_normals[j].map_or(d, |m| m.dot(&(r - direct_pts[j])).abs()) <= params.inlier_threshold)
    };
    let inlier_fraction = virtual_pts.iter().filter(|p| on_surface(p)).count() as f64 / virtual_pts.len() as f64;
    Ok(Registration {
        h_m,
        plane,
        inlier_fraction,
        converged: inlier_fraction >= params.min_inlier_fraction,
        residual,
        icp_iterations: iterations,
    })
}

/// Translational (meters) and rotational (degrees) discrepancy between two mirror transforms.
pub fn calib_error(h_est: &HomogeneousTransform, h_true: &HomogeneousTransform) -> Result<(f64, f64)> {
    for h in [h_est, h_true] {
        if h.kind() != TransformKind::Improper {
            return Err(Error::NotAReflection { residual: f64::INFINITY });
        }
    }
    if h_est == h_true {
        return Ok((0.0, 0.0));
    }
    let delta = h_est * &h_true.inverse();
    let r = delta.rotation();
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    Ok((delta.translation().norm(), sin.atan2(cos).to_degrees()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub h_m_estimated: HomogeneousTransform,
    pub plane_estimated: Plane,
    pub translational_error: f64,
    pub rotational_error: f64,
    pub converged: bool,
    pub inlier_fraction: f64,
}

impl CalibrationResult {
    pub fn from_registration(reg: &Registration, h_true: &HomogeneousTransform) -> Result<Self> {
        let (t, r) = calib_error(&reg.h_m, h_true)?;
        Ok(Self {
            h_m_estimated: reg.h_m,
            plane_estimated: reg.plane,
            translational_error: t,
            rotational_error: r,
            converged: reg.converged,
            inlier_fraction: reg.inlier_fraction,
        })
    }

    /// Outcome when registration is impossible: the prior is kept.
    pub fn fallback(h_init: &HomogeneousTransform, h_true: &HomogeneousTransform) -> Result<Self> {
        let (h, plane) = project_to_reflection(h_init)?;
        let (t, r) = calib_error(&h, h_true)?;
        Ok(Self {
            h_m_estimated: h,
            plane_estimated: plane,
            translational_error: t,
            rotational_error: r,
            converged: false,
            inlier_fraction: 0.0,
        })
    }
}

/// Captures the arm at `arm` with the mirror of `scene` and registers against `h_init`.
pub fn calibrate_once(
    scene: &SceneModel,
    arm: &ArmModel,
    h_init: &HomogeneousTransform,
    setup: &CalibrationSetup,
    noise: &NoiseModel,
    params: &RegistrationParams,
) -> Result<CalibrationResult> {
    let posed = scene.with_arm(Some(*arm));
    let pair = capture_pair(&posed, setup, noise)?;
    let direct = pair.direct.filtered(|p, via| !via && p.z > scene.height_threshold);
    let reflect = pair.reflect_virtual.filtered(|_, via| via);
    let params = RegistrationParams {
        height_threshold: Some(scene.height_threshold),
        ..*params
    };
    let h_true = scene.mirror.transform();
    match register(&reflect, &direct, h_init, &params) {
        Ok(reg) => CalibrationResult::from_registration(&reg, &h_true),
        Err(Error::NoOverlap { .. }) => CalibrationResult::fallback(h_init, &h_true),
        Err(e) => Err(e),
    }
}

/// One row of a displacement sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub angle_deg: f64,
    pub mean_translational: f64,
    pub mean_rotational: f64,
    pub converged_fraction: f64,
    pub runs: Vec<CalibrationResult>,
}

/// Tilts the true mirror by each angle, then registers `runs` noisy captures against the untilted prior.
pub fn calibration_sweep(
    scene: &SceneModel,
    angles_deg: &[f64],
    arm: &ArmModel,
    runs: usize,
    noise: &NoiseModel,
    setup: &CalibrationSetup,
    params: &RegistrationParams,
) -> Result<Vec<SweepRow>> {
    if runs == 0 {
        return Err(Error::Validation("runs must be >= 1".into()));
    }
    let h_init = scene.mirror.transform();
    let mut rows = Vec::with_capacity(angles_deg.len());
    for (i, &angle) in angles_deg.iter().enumerate() {
        if angle.abs() > 10.0 {
            return Err(Error::Validation(format!("sweep angle {angle} outside +-10 degrees")));
        }
        let displaced = scene.with_mirror(scene.mirror.tilted(angle.to_radians()));
        let mut results = Vec::with_capacity(runs);
        for run in 0..runs {
            let s = seed::derive_indexed(noise.seed, "sweep", (i * runs + run) as u64);
            let reg_params = RegistrationParams {
                seed: seed::derive(s, "ransac"),
                ..*params
            };
            results.push(calibrate_once(&displaced, arm, &h_init, setup, &noise.with_seed(s), &reg_params)?);
        }
        let n = results.len() as f64;
        rows.push(SweepRow {
            angle_deg: angle,
            mean_translational: results.iter().map(|r| r.translational_error).sum::<f64>() / n,
            mean_rotational: results.iter().map(|r| r.rotational_error).sum::<f64>() / n,
            converged_fraction: results.iter().filter(|r| r.converged).count() as f64 / n,
            runs: results,
        });
    }
    Ok(rows)
}

/// Mean calibration error of one arm pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseQuality {
    pub joint_angles: [f64; 2],
    pub n_points: f64,
    pub mean_translational: f64,
    pub mean_rotational: f64,
    pub converged_fraction: f64,
}

/// Distinct feasible poses of a search, `count` of them spread evenly over the
/// n_points ranking (best first).
pub fn spread_poses(search: &PoseSearchResult, count: usize) -> Vec<([f64; 2], f64)> {
    let mut evs: Vec<([f64; 2], f64)> = search.evaluations.iter().filter_map(|(a, v)| v.map(|v| (*a, v))).collect();
    evs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0[0].total_cmp(&b.0[0])).then(a.0[1].total_cmp(&b.0[1])));
    evs.dedup_by(|a, b| a.0 == b.0);
    if count == 0 || evs.is_empty() {
        return Vec::new();
    }
    if count >= evs.len() {
        return evs;
    }
    if count == 1 {
        return vec![evs[0]];
    }
    let last = evs.len() - 1;
    (0..count).map(|i| evs[(i * last + (count - 1) / 2) / (count - 1)]).collect()
}

/// Runs a displacement sweep at each pose and averages the errors over angles and runs.
pub fn pose_quality(
    scene: &SceneModel,
    poses: &[([f64; 2], f64)],
    angles_deg: &[f64],
    runs: usize,
    noise: &NoiseModel,
    setup: &CalibrationSetup,
    params: &RegistrationParams,
) -> Result<Vec<PoseQuality>> {
    let template = scene
        .arm
        .ok_or_else(|| Error::Validation("calibration needs an arm in the scene".into()))?;
    poses
        .iter()
        .map(|&(joints, n)| {
            let rows = calibration_sweep(scene, angles_deg, &template.with_joints(joints), runs, noise, setup, params)?;
            let k = rows.len().max(1) as f64;
            Ok(PoseQuality {
                joint_angles: joints,
                n_points: n,
                mean_translational: rows.iter().map(|r| r.mean_translational).sum::<f64>() / k,
                mean_rotational: rows.iter().map(|r| r.mean_rotational).sum::<f64>() / k,
                converged_fraction: rows.iter().map(|r| r.converged_fraction).sum::<f64>() / k,
            })
        })
        .collect()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
