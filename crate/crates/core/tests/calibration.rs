use std::sync::OnceLock;

use mirrorsense::calibration::*;
use mirrorsense::geometry::{householder_from_plane, plane_from_transform, Frame, Plane, PointCloud};
use mirrorsense::pipeline::realize_capture;
use mirrorsense::scene::*;
use mirrorsense::sensor::{render, NoiseModel};
use nalgebra::{Matrix4, Point3, Vector3};
use proptest::prelude::*;

fn scene() -> SceneModel {
    randomized_scene(3, Difficulty::Easy).unwrap()
}

fn setup() -> CalibrationSetup {
    CalibrationSetup::for_scene(&scene()).unwrap()
}

/// Search result of the default space on the noiseless test scene.
fn optimal() -> &'static PoseSearchResult {
    static RESULT: OnceLock<PoseSearchResult> = OnceLock::new();
    RESULT.get_or_init(|| find_optimal_pose(&scene(), &PoseSearchSpace::default(), &NoiseModel::noiseless(), &setup()).unwrap())
}

/// Direct capture and realized reflection capture of `scene`.
fn world_pair(scene: &SceneModel) -> (PointCloud, PointCloud) {
    let noise = NoiseModel::noiseless();
    let h = scene.mirror.transform();
    let direct = render(scene, 0.0, &noise, &setup().intrinsics).unwrap();
    let reflect = render(scene, setup().theta, &noise, &setup().intrinsics).unwrap();
    (
        realize_capture(&direct, &scene.sensor, &h).unwrap(),
        realize_capture(&reflect, &scene.sensor, &h).unwrap(),
    )
}

fn raised(scene: &SceneModel) -> SceneModel {
    scene.with_arm(Some(optimal().arm))
}

proptest! {
    #[test]
    fn point_count_is_linear(a in 0usize..10_000, b in 0usize..10_000, c in 0usize..10_000, d in 0usize..10_000, w in 0.1..10.0f64) {
        let whole = n_points(a + b, c + d, w);
        let parts = n_points(a, c, w) + n_points(b, d, w);
        prop_assert!((whole - parts).abs() <= 1e-9 * whole.max(1.0));
    }
}

#[test]
fn lowered_arm_shows_no_points() {
    let s = scene();
    let lowered = s.with_arm(Some(s.arm.unwrap().with_joints([0.0, 0.0])));
    let (direct, reflect) = world_pair(&lowered);
    assert_eq!(arm_point_counts(&direct, &reflect, s.height_threshold).unwrap(), (0, 0));
}

#[test]
fn blocked_mirror_shows_only_direct_points() {
    let s = raised(&scene());
    let (direct, reflect) = world_pair(&s);
    let (d, r) = arm_point_counts(&direct, &reflect, s.height_threshold).unwrap();
    assert!(d > 0 && r > 0);

    // a board standing in front of the whole mirror face
    let mut blocked = s.clone();
    let m = s.mirror.center;
    blocked.boxes.push(SceneBox::on_ground(m[0] - 0.05, m[1], [0.02, s.mirror.width + 0.4, m[2] + s.mirror.height], 0.0));
    let (direct, reflect) = world_pair(&blocked);
    let (d, r) = arm_point_counts(&direct, &reflect, s.height_threshold).unwrap();
    assert_eq!(r, 0);
    assert!(d > 0);
}

#[test]
fn counts_shrink_as_threshold_rises() {
    let s = raised(&scene());
    let (direct, reflect) = world_pair(&s);
    let mut last = (usize::MAX, usize::MAX);
    for i in 0..30 {
        let (d, r) = arm_point_counts(&direct, &reflect, 0.05 * i as f64).unwrap();
        assert!(d <= last.0 && r <= last.1);
        last = (d, r);
    }
}

#[test]
fn sensor_frame_input_is_rejected() {
    let cloud = PointCloud::new(Frame::Sensor);
    assert!(arm_point_counts(&cloud, &PointCloud::new(Frame::World), 0.5).is_err());
}

fn criterion(scene: &SceneModel, joints: [f64; 2]) -> Option<f64> {
    let arm = scene.arm.unwrap().with_joints(joints);
    evaluate_pose(scene, &arm, &setup(), &NoiseModel::noiseless())
        .unwrap()
        .map(|(d, r)| n_points(d, r, DEFAULT_WEIGHT))
}

#[test]
fn single_angle_search_returns_that_angle() {
    let space = PoseSearchSpace {
        joints: vec![Joint::Shoulder],
        angle_grid: vec![vec![0.6]],
    };
    let res = find_optimal_pose(&scene(), &space, &NoiseModel::noiseless(), &setup()).unwrap();
    assert_eq!(res.arm.joint_angles, [0.6, 0.0]);
    assert_eq!(res.captures, 1);
}

#[test]
fn single_joint_search_is_exhaustive() {
    let s = scene();
    let grid: Vec<f64> = [0.0f64, 45.0, 90.0].iter().map(|a| a.to_radians()).collect();
    let space = PoseSearchSpace {
        joints: vec![Joint::Shoulder],
        angle_grid: vec![grid.clone()],
    };
    let res = find_optimal_pose(&s, &space, &NoiseModel::noiseless(), &setup()).unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &a in &grid {
        if let Some(v) = criterion(&s, [a, 0.0]) {
            if v > best.0 {
                best = (v, a);
            }
        }
    }
    assert_eq!(res.arm.joint_angles, [best.1, 0.0]);
    assert_eq!(res.n_points, best.0);
}

#[test]
fn default_search_uses_twenty_captures_and_improves() {
    let s = scene();
    let res = optimal();
    // every grid angle is tried; poses that put the arm through the ground are not captured
    assert_eq!(res.evaluations.len(), 20);
    let feasible = res.evaluations.iter().filter(|(_, v)| v.is_some()).count();
    assert_eq!(res.captures, feasible);
    assert!(feasible >= 15);
    assert!(!res.degenerate);
    let initial = criterion(&s, [0.0, 0.0]).unwrap();
    assert!(res.n_points >= initial);
    assert_eq!(criterion(&s, res.arm.joint_angles), Some(res.n_points));
}

#[test]
fn search_without_arm_is_an_error() {
    let s = scene().with_arm(None);
    assert!(find_optimal_pose(&s, &PoseSearchSpace::default(), &NoiseModel::noiseless(), &setup()).is_err());
}

/// Arm clouds of a noiseless capture with the mirror displaced by `angle_deg`.
fn arm_pair(angle_deg: f64) -> (SceneModel, PointCloud, PointCloud) {
    let s = scene();
    let displaced = raised(&s).with_mirror(s.mirror.tilted(angle_deg.to_radians()));
    let pair = capture_pair(&displaced, &setup(), &NoiseModel::noiseless()).unwrap();
    let direct = pair.direct.filtered(|p, via| !via && p.z > s.height_threshold);
    let reflect = pair.reflect_virtual.filtered(|_, via| via);
    (displaced, direct, reflect)
}

fn reg_params(s: &SceneModel) -> RegistrationParams {
    RegistrationParams {
        height_threshold: Some(s.height_threshold),
        ..RegistrationParams::default()
    }
}

fn shuffled(cloud: &PointCloud) -> PointCloud {
    let n = cloud.len();
    let mut out = PointCloud::new(cloud.frame);
    for i in 0..n {
        let j = (i * 7919 + 13) % n;
        out.push(cloud.points[j], cloud.via_mirror[j]);
    }
    out
}

#[test]
fn registration_ignores_point_order() {
    let (s, direct, reflect) = arm_pair(2.0);
    assert!(direct.len() % 7919 != 0 && reflect.len() % 7919 != 0);
    let h_init = scene().mirror.transform();
    let a = register(&reflect, &direct, &h_init, &reg_params(&s)).unwrap();
    let b = register(&shuffled(&reflect), &shuffled(&direct), &h_init, &reg_params(&s)).unwrap();
    assert!((a.h_m.matrix() - b.h_m.matrix()).amax() < 1e-12);
    assert_eq!(a.inlier_fraction, b.inlier_fraction);
}

#[test]
fn exact_correspondences_recover_the_identity() {
    let (s, direct, _) = arm_pair(0.0);
    let h_true = s.mirror.transform();
    let virtual_points: Vec<Point3<f64>> = direct.points.iter().map(|p| h_true.transform_point(p)).collect();
    let mut reflect = PointCloud::new(Frame::World);
    for p in virtual_points {
        reflect.push(p, true);
    }
    let reg = register(&reflect, &direct, &h_true, &reg_params(&s)).unwrap();
    let (t, r) = calib_error(&reg.h_m, &h_true).unwrap();
    assert!(t < 1e-6 && r < 1e-4, "{t} m, {r} deg");
    assert!(reg.converged);
}

#[test]
fn tilted_mirror_normal_is_recovered() {
    let (s, direct, reflect) = arm_pair(3.0);
    let reg = register(&reflect, &direct, &scene().mirror.transform(), &reg_params(&s)).unwrap();
    let angle = reg.plane.normal().angle(&s.mirror.plane.normal()).to_degrees();
    assert!(angle.min(180.0 - angle) < 0.1, "normal off by {angle} deg");
    assert!(reg.converged);

    let sq = (reg.h_m * reg.h_m).matrix() - Matrix4::identity();
    assert!(sq.amax() < 1e-9);
    assert!(plane_from_transform(&reg.h_m, 1e-9).is_ok());
}

#[test]
fn too_few_points_is_no_overlap() {
    let mut tiny = PointCloud::new(Frame::World);
    tiny.push(Point3::new(1.0, 0.0, 1.0), true);
    let (_, direct, _) = arm_pair(0.0);
    let err = register(&tiny, &direct, &scene().mirror.transform(), &RegistrationParams::default()).unwrap_err();
    assert!(matches!(err, mirrorsense::Error::NoOverlap { .. }));
}

fn wall(normal: Vector3<f64>, foot: Point3<f64>) -> nalgebra::Matrix4<f64> {
    *householder_from_plane(&Plane::from_normal_point(normal, foot).unwrap()).matrix()
}

#[test]
fn rotating_the_plane_doubles_the_angle() {
    let foot = Point3::new(1.2, 0.3, 0.9);
    let base = householder_from_plane(&Plane::from_normal_point(Vector3::x(), foot).unwrap());
    for phi_deg in [0.5, 2.0, 5.0, 10.0] {
        let phi = f64::to_radians(phi_deg);
        for axis in [Vector3::y(), Vector3::z()] {
            let n = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), phi) * Vector3::x();
            let tilted = householder_from_plane(&Plane::from_normal_point(n, foot).unwrap());
            assert_eq!(*tilted.matrix(), wall(n, foot));
            let (_, r) = calib_error(&tilted, &base).unwrap();
            assert!((r - 2.0 * phi_deg).abs() < 1e-9, "{r} vs {}", 2.0 * phi_deg);
        }
    }
}

#[test]
fn shifting_the_plane_doubles_the_offset() {
    let a = householder_from_plane(&Plane::new(0.6, 0.8, 0.0, -1.0).unwrap());
    let b = householder_from_plane(&Plane::new(0.6, 0.8, 0.0, -1.01).unwrap());
    let (t, r) = calib_error(&a, &b).unwrap();
    assert!((t - 0.02).abs() < 1e-12);
    assert!(r < 1e-6);
}

fn unit_plane() -> impl Strategy<Value = Plane> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -2.0..2.0f64)
        .prop_filter("degenerate normal", |(a, b, c, _)| (a * a + b * b + c * c).sqrt() > 1e-3)
        .prop_map(|(a, b, c, d)| {
            let n = Vector3::new(a, b, c).normalize();
            Plane::new(n.x, n.y, n.z, d).unwrap()
        })
}

proptest! {
    #[test]
    fn error_metric_identity_and_symmetry(p in unit_plane(), q in unit_plane()) {
        let (a, b) = (householder_from_plane(&p), householder_from_plane(&q));
        prop_assert_eq!(calib_error(&a, &a).unwrap(), (0.0, 0.0));
        let (tab, rab) = calib_error(&a, &b).unwrap();
        let (_, rba) = calib_error(&b, &a).unwrap();
        prop_assert!((rab - rba).abs() < 1e-9);
        prop_assert!(tab >= 0.0 && rab >= 0.0);
    }
}

#[test]
fn noiseless_sweep_at_zero_has_small_error() {
    let s = scene();
    let rows = calibration_sweep(
        &s,
        &[0.0],
        &optimal().arm,
        1,
        &NoiseModel::noiseless(),
        &setup(),
        &RegistrationParams::default(),
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    // limited by pixel sampling of the arm surface
    assert!(row.mean_translational < 0.005, "{}", row.mean_translational);
    assert!(row.mean_rotational < 0.2, "{}", row.mean_rotational);
    assert_eq!(row.converged_fraction, 1.0);
}

#[test]
fn sweep_rejects_large_angles_and_zero_runs() {
    let s = scene();
    let arm = optimal().arm;
    let noise = NoiseModel::noiseless();
    let params = RegistrationParams::default();
    assert!(calibration_sweep(&s, &[12.0], &arm, 1, &noise, &setup(), &params).is_err());
    assert!(calibration_sweep(&s, &[0.0], &arm, 0, &noise, &setup(), &params).is_err());
}
