use approx::assert_abs_diff_eq;
use mirrorsense::geometry::*;
use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use proptest::prelude::*;

fn unit_plane() -> impl Strategy<Value = Plane> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -3.0..3.0f64)
        .prop_filter("degenerate normal", |(a, b, c, _)| (a * a + b * b + c * c).sqrt() > 1e-3)
        .prop_map(|(a, b, c, d)| {
            let n = Vector3::new(a, b, c).normalize();
            Plane::new(n.x, n.y, n.z, d).unwrap()
        })
}

fn point() -> impl Strategy<Value = Point3<f64>> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn tilt() -> impl Strategy<Value = (f64, f64)> {
    (-1.5..1.5f64, 0.0..0.5f64)
}

/// Rotation about Y by `theta` in the sense of the tilt unit, about `pivot`.
fn pivot_oracle(theta: f64, r: f64) -> Matrix4<f64> {
    let (s, c) = theta.sin_cos();
    let rot = Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c);
    let pivot = Vector3::new(0.0, 0.0, -r);
    let mut to = Matrix4::identity();
    to.fixed_view_mut::<3, 1>(0, 3).copy_from(&pivot);
    let mut back = Matrix4::identity();
    back.fixed_view_mut::<3, 1>(0, 3).copy_from(&-pivot);
    let mut r4 = Matrix4::identity();
    r4.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    to * r4 * back
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn householder_is_an_involution(p in unit_plane()) {
        let h = householder_from_plane(&p);
        let sq = (h * h).matrix() - Matrix4::identity();
        prop_assert!(sq.amax() < 1e-12);
    }

    #[test]
    fn determinants(p in unit_plane(), (theta, r) in tilt()) {
        let h = householder_from_plane(&p);
        prop_assert!((h.rotation().determinant() + 1.0).abs() < 1e-9);
        prop_assert_eq!(h.kind(), TransformKind::Improper);
        let s = tilt_transform(theta, r).unwrap();
        prop_assert!((s.rotation().determinant() - 1.0).abs() < 1e-9);
        prop_assert_eq!(s.kind(), TransformKind::Proper);
    }

    #[test]
    fn isometry(p in unit_plane(), (theta, r) in tilt(), x in point(), y in point()) {
        let d = (x - y).norm();
        for t in [householder_from_plane(&p), tilt_transform(theta, r).unwrap()] {
            let dt = (t.transform_point(&x) - t.transform_point(&y)).norm();
            prop_assert!((dt - d).abs() < 1e-9);
        }
    }

    #[test]
    fn tilt_fixes_pivot((theta, r) in tilt()) {
        let s = tilt_transform(theta, r).unwrap();
        let pivot = Point3::new(0.0, 0.0, -r);
        prop_assert!((s.transform_point(&pivot) - pivot).amax() < 1e-12);
    }

    #[test]
    fn tilt_is_rotation_about_pivot((theta, r) in tilt()) {
        let s = tilt_transform(theta, r).unwrap();
        prop_assert!((s.matrix() - pivot_oracle(theta, r)).amax() < 1e-12);
    }

    #[test]
    fn plane_round_trip(p in unit_plane()) {
        let back = plane_from_transform(&householder_from_plane(&p), 1e-9).unwrap();
        let want = p.canonical().coefficients();
        for (a, b) in back.coefficients().iter().zip(want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_composes(p in unit_plane(), (theta, r) in tilt(), x in point()) {
        let t1 = tilt_transform(theta, r).unwrap();
        let t2 = householder_from_plane(&p);
        let cloud = PointCloud::from_points(vec![x], Frame::TiltedSensor);
        let chained = apply(&t2, &apply(&t1, &cloud, Frame::Sensor), Frame::World);
        let once = apply(&(t2 * t1), &cloud, Frame::World);
        prop_assert!((chained.points[0] - once.points[0]).amax() < 1e-12);
    }
}

#[test]
fn reflection_across_ground() {
    let h = householder_from_plane(&Plane::new(0.0, 0.0, 1.0, 0.0).unwrap());
    assert_eq!(*h.matrix(), Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, -1.0, 1.0)));
}

#[test]
fn reflection_across_mirror_wall() {
    let h = householder_from_plane(&Plane::new(1.0, 0.0, 0.0, -1.2).unwrap());
    let q = h.transform_point(&Point3::new(0.5, 0.0, 0.0));
    assert_abs_diff_eq!(q, Point3::new(1.9, 0.0, 0.0), epsilon = 1e-12);
}

#[test]
fn quarter_tilt() {
    let s = tilt_transform(std::f64::consts::FRAC_PI_2 - 1e-12, 0.1);
    // exactly pi/2 is outside the domain
    assert!(tilt_transform(std::f64::consts::FRAC_PI_2, 0.1).is_err());
    let s = s.unwrap();
    let want = Matrix3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    assert_abs_diff_eq!(s.rotation(), want, epsilon = 1e-11);
    assert_abs_diff_eq!(s.translation(), Vector3::new(-0.1, 0.0, -0.1), epsilon = 1e-11);
}

#[test]
fn zero_tilt_is_identity() {
    for r in [0.0, 0.06, 1.0] {
        assert_eq!(tilt_transform(0.0, r).unwrap(), HomogeneousTransform::identity());
    }
}

#[test]
fn apply_identity_and_translation() {
    let cloud = PointCloud::from_points(vec![Point3::origin(), Point3::new(1.0, 2.0, 3.0)], Frame::Sensor);
    let same = apply(&HomogeneousTransform::identity(), &cloud, Frame::Sensor);
    assert_eq!(same, cloud);
    let moved = apply(&HomogeneousTransform::from_translation(Vector3::x()), &cloud, Frame::World);
    assert_eq!(moved.points[0], Point3::new(1.0, 0.0, 0.0));
    assert_eq!(moved.frame, Frame::World);
}

#[test]
fn plane_of_ground_reflection() {
    let h = HomogeneousTransform::from_matrix(Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, -1.0, 1.0))).unwrap();
    let p = plane_from_transform(&h, 1e-9).unwrap();
    assert_eq!(p.coefficients(), [0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn proper_rotation_is_not_a_reflection() {
    let h = tilt_transform(0.3, 0.1).unwrap();
    assert!(matches!(plane_from_transform(&h, 1e-6), Err(mirrorsense::Error::NotAReflection { .. })));
}
