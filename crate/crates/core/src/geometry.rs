//! Frames, rigid and reflective homogeneous transforms, mirror planes and point clouds.
//!
//! Conventions: the world frame has the ground at `z = 0` with `Z` up. The
//! `Sensor` frame is parallel to the world frame with its origin at the
//! optical center of the untilted sensor; `X` points horizontally toward the
//! mirror and `Y` is the tilt axis. The `TiltedSensor` frame is the sensor
//! frame after the tilt unit rotated it by `theta` about `Y`, pivoting on
//! `(0, 0, -r)`. Cameras look along their local `-Z`.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::ops::Mul;

use crate::error::{Error, Result};

/// Orthogonality and determinant tolerance for transform validation.
pub const ORTHO_TOL: f64 = 1e-9;
/// Unit-normal tolerance for planes.
pub const UNIT_TOL: f64 = 1e-12;
/// Default residual tolerance accepted when recovering a plane from a transform.
pub const REFLECTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    World,
    Sensor,
    TiltedSensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// Rotation block with determinant +1.
    Proper,
    /// Rotation block with determinant -1 (contains a reflection).
    Improper,
}

/// A 4x4 homogeneous transform whose linear block is orthogonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousTransform {
    m: Matrix4<f64>,
    kind: TransformKind,
}

impl HomogeneousTransform {
    pub fn identity() -> Self {
        Self {
            m: Matrix4::identity(),
            kind: TransformKind::Proper,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            m: Matrix4::new_translation(&t),
            kind: TransformKind::Proper,
        }
    }

    /// Builds a transform from an orthogonal 3x3 block and a translation.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !err.is_finite() || err > ORTHO_TOL || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!(
                "linear block is not orthogonal (max |R^T R - I| = {err:.3e})"
            )));
        }
        Ok(Self::from_parts_unchecked(rotation, translation))
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        let kind = if rotation.determinant() < 0.0 {
            TransformKind::Improper
        } else {
            TransformKind::Proper
        };
        Self { m, kind }
    }

    /// Validates a raw 4x4 matrix: exact `(0,0,0,1)` bottom row and orthogonal block.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::Domain("bottom row must be (0, 0, 0, 1)".into()));
        }
        Self::from_parts(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        Self::from_parts_unchecked(rt, -(rt * self.translation()))
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation() * p.coords + self.translation())
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    /// Projects the linear block back onto the orthogonal group (polar
    /// decomposition), keeping the current determinant sign.
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        Self::from_parts_unchecked(u * vt, self.translation())
    }
}

impl Mul for HomogeneousTransform {
    type Output = HomogeneousTransform;

    fn mul(self, rhs: Self) -> Self {
        let kind = if self.kind == rhs.kind {
            TransformKind::Proper
        } else {
            TransformKind::Improper
        };
        Self {
            m: self.m * rhs.m,
            kind,
        }
    }
}

impl Mul for &HomogeneousTransform {
    type Output = HomogeneousTransform;

    fn mul(self, rhs: Self) -> HomogeneousTransform {
        *self * *rhs
    }
}

/// The plane `a x + b y + c z + d = 0` with a unit normal `(a, b, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Plane {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Plane {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let norm = (a * a + b * b + c * c).sqrt();
        if !d.is_finite() || !norm.is_finite() || (norm * norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitNormal { norm });
        }
        Ok(Self { a, b, c, d })
    }

    /// Plane through `point` with the (not necessarily unit) `normal`.
    pub fn from_normal_point(normal: Vector3<f64>, point: Point3<f64>) -> Result<Self> {
        let norm = normal.norm();
        if !(norm > 1e-12) {
            return Err(Error::NonUnitNormal { norm });
        }
        let n = normal / norm;
        Ok(Self {
            a: n.x,
            b: n.y,
            c: n.z,
            d: -n.dot(&point.coords),
        })
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn offset(&self) -> f64 {
        self.d
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal().dot(&p.coords) + self.d
    }

    /// Orthogonal projection of `p` onto the plane.
    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal() * self.signed_distance(p)
    }

    /// Same plane with the sign chosen so the first non-zero normal component is positive.
    pub fn canonical(&self) -> Self {
        let flip = [self.a, self.b, self.c]
            .into_iter()
            .find(|v| v.abs() > UNIT_TOL)
            .is_some_and(|v| v < 0.0);
        if flip {
            Self {
                a: -self.a,
                b: -self.b,
                c: -self.c,
                d: -self.d,
            }
        } else {
            *self
        }
    }

    /// Angle between the two planes' normals in radians, ignoring orientation.
    pub fn angle_to(&self, other: &Plane) -> f64 {
        self.normal().dot(&other.normal()).abs().min(1.0).acos()
    }
}

impl TryFrom<[f64; 4]> for Plane {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Plane::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Plane> for [f64; 4] {
    fn from(p: Plane) -> Self {
        p.coefficients()
    }
}

/// Mirror-image transform across `plane`: linear block `I - 2 n n^T`, translation `-2 d n`.
pub fn householder_from_plane(plane: &Plane) -> HomogeneousTransform {
    let n = plane.normal();
    let rotation = Matrix3::identity() - 2.0 * n * n.transpose();
    HomogeneousTransform::from_parts_unchecked(rotation, -2.0 * plane.d * n)
}

/// Transform from the tilted-sensor frame to the sensor frame for a tilt of
/// `theta` radians about `Y` on a tilt unit of radius `radius`.
pub fn tilt_transform(theta: f64, radius: f64) -> Result<HomogeneousTransform> {
    if !theta.is_finite() || theta.abs() >= FRAC_PI_2 {
        return Err(Error::InvalidTilt { angle: theta });
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Domain(format!("tilt radius must be >= 0, got {radius}")));
    }
    let (s, c) = theta.sin_cos();
    let rotation = Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c);
    let translation = Vector3::new(-radius * s, 0.0, -radius * (1.0 - c));
    Ok(HomogeneousTransform::from_parts_unchecked(rotation, translation))
}

/// Recovers the mirror plane of a (near-)reflection, in canonical sign.
///
/// The normal is the dominant eigenvector of the symmetric part of
/// `(I - R) / 2` and the offset is `-n^T t / 2`. Fails when `h` is proper or
/// when the re-synthesized reflection differs from `h` by more than `tol`.
pub fn plane_from_transform(h: &HomogeneousTransform, tol: f64) -> Result<Plane> {
    let (plane, residual) = nearest_reflection_plane(h)?;
    if residual > tol {
        return Err(Error::NotAReflection { residual });
    }
    Ok(plane)
}

/// Plane of the reflection closest to `h`, and the max-abs residual between them.
pub fn nearest_reflection_plane(h: &HomogeneousTransform) -> Result<(Plane, f64)> {
    let r = h.rotation();
    let det = r.determinant();
    if !(det < 0.0) {
        return Err(Error::NotAReflection {
            residual: (det + 1.0).abs(),
        });
    }
    let half = (Matrix3::identity() - r) * 0.5;
    let sym = (half + half.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    let n = eig.eigenvectors.column(idx).normalize();
    let d = -n.dot(&h.translation()) / 2.0;
    let plane = Plane {
        a: n.x,
        b: n.y,
        c: n.z,
        d,
    }
    .canonical();
    let residual = (householder_from_plane(&plane).matrix() - h.matrix()).abs().max();
    Ok((plane, residual))
}

/// Position and tilt state of the sensor on its tilt unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRig {
    /// Optical center at zero tilt, world coordinates.
    pub position: [f64; 3],
    pub tilt_radius: f64,
    #[serde(default)]
    pub tilt_angle: f64,
}

impl SensorRig {
    pub fn validate(&self) -> Result<()> {
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("sensor.position must be finite".into()));
        }
        if !(self.tilt_radius >= 0.0) {
            return Err(Error::Validation("sensor.tilt_radius must be >= 0".into()));
        }
        if !(self.tilt_angle.abs() < FRAC_PI_2) {
            return Err(Error::InvalidTilt {
                angle: self.tilt_angle,
            });
        }
        Ok(())
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.position)
    }

    pub fn with_tilt(&self, theta: f64) -> Self {
        Self {
            tilt_angle: theta,
            ..*self
        }
    }

    /// World-from-sensor transform (pure translation to the optical center).
    pub fn world_from_sensor(&self) -> HomogeneousTransform {
        HomogeneousTransform::from_translation(Vector3::from(self.position))
    }

    /// World-from-tilted-sensor transform at tilt `theta`.
    pub fn world_from_tilted(&self, theta: f64) -> Result<HomogeneousTransform> {
        Ok(self.world_from_sensor() * tilt_transform(theta, self.tilt_radius)?)
    }
}

/// Points in meters with a frame label and a per-point mirror-return flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub via_mirror: Vec<bool>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(frame: Frame) -> Self {
        Self {
            points: Vec::new(),
            via_mirror: Vec::new(),
            frame,
        }
    }

    pub fn from_points(points: Vec<Point3<f64>>, frame: Frame) -> Self {
        let via_mirror = vec![false; points.len()];
        Self {
            points,
            via_mirror,
            frame,
        }
    }

    pub fn push(&mut self, p: Point3<f64>, via_mirror: bool) {
        debug_assert!(p.coords.iter().all(|v| v.is_finite()));
        self.points.push(p);
        self.via_mirror.push(via_mirror);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point3<f64>, bool)> {
        self.points.iter().zip(self.via_mirror.iter().copied())
    }

    pub fn extend(&mut self, other: &PointCloud) -> Result<()> {
        if other.frame != self.frame {
            return Err(Error::FrameMismatch {
                expected: self.frame,
                found: other.frame,
            });
        }
        self.points.extend_from_slice(&other.points);
        self.via_mirror.extend_from_slice(&other.via_mirror);
        Ok(())
    }

    /// Keeps the points for which `keep(point, via_mirror)` holds.
    pub fn filtered(&self, mut keep: impl FnMut(&Point3<f64>, bool) -> bool) -> PointCloud {
        let mut out = PointCloud::new(self.frame);
        for (p, m) in self.iter() {
            if keep(p, m) {
                out.push(*p, m);
            }
        }
        out
    }

    pub fn mirror_count(&self) -> usize {
        self.via_mirror.iter().filter(|&&m| m).count()
    }
}

/// Maps every point of `cloud` through `t` and relabels it as `new_frame`.
pub fn apply(t: &HomogeneousTransform, cloud: &PointCloud, new_frame: Frame) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.transform_point(p)).collect(),
        via_mirror: cloud.via_mirror.clone(),
        frame: new_frame,
    }
}

/// Rotation matrix of `angle` radians about the unit `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn householder_of_ground_plane_flips_z() {
        let h = householder_from_plane(&Plane::new(0.0, 0.0, 1.0, 0.0).unwrap());
        let expected = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, -1.0, 1.0));
        assert_abs_diff_eq!(*h.matrix(), expected, epsilon = 1e-15);
        assert_eq!(h.kind(), TransformKind::Improper);
    }

    #[test]
    fn householder_mirrors_across_vertical_plane() {
        let h = householder_from_plane(&Plane::new(1.0, 0.0, 0.0, -1.2).unwrap());
        let p = h.transform_point(&Point3::new(0.5, 0.0, 0.0));
        assert_abs_diff_eq!(p, Point3::new(1.9, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn non_unit_plane_is_rejected() {
        assert!(matches!(
            Plane::new(1.0, 1.0, 0.0, 0.0),
            Err(Error::NonUnitNormal { .. })
        ));
    }

    #[test]
    fn tilt_zero_is_identity() {
        for r in [0.0, 0.05, 1.0] {
            let h = tilt_transform(0.0, r).unwrap();
            assert_abs_diff_eq!(*h.matrix(), Matrix4::identity(), epsilon = 0.0);
        }
    }

    #[test]
    fn tilt_transform_matches_printed_matrix_at_right_angle() {
        // Evaluated just inside the open domain; the limit is the printed matrix at 90 degrees.
        let theta = FRAC_PI_2 - 1e-12;
        let h = tilt_transform(theta, 0.1).unwrap();
        let expected = Matrix4::new(
            0.0, 0.0, -1.0, -0.1, //
            0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, -0.1, //
            0.0, 0.0, 0.0, 1.0,
        );
        assert_abs_diff_eq!(*h.matrix(), expected, epsilon = 1e-11);
        assert!(tilt_transform(FRAC_PI_2, 0.1).is_err());
        assert!(tilt_transform(0.2, -0.1).is_err());
    }

    #[test]
    fn tilt_transform_is_rotation_about_pivot() {
        for &(theta, r) in &[(0.3f64, 0.1f64), (-1.2, 0.06), (1.4, 0.0), (0.7, 2.5)] {
            let pivot = Vector3::new(0.0, 0.0, -r);
            let rot_y = HomogeneousTransform::from_parts(
                Matrix3::new(
                    theta.cos(), 0.0, -theta.sin(),
                    0.0, 1.0, 0.0,
                    theta.sin(), 0.0, theta.cos(),
                ),
                Vector3::zeros(),
            )
            .unwrap();
            let composed = HomogeneousTransform::from_translation(pivot)
                * rot_y
                * HomogeneousTransform::from_translation(-pivot);
            assert_abs_diff_eq!(
                *tilt_transform(theta, r).unwrap().matrix(),
                *composed.matrix(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn apply_translation_and_identity() {
        let mut cloud = PointCloud::new(Frame::Sensor);
        cloud.push(Point3::origin(), true);
        let same = apply(&HomogeneousTransform::identity(), &cloud, Frame::Sensor);
        assert_eq!(same, cloud);
        let moved = apply(
            &HomogeneousTransform::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            &cloud,
            Frame::World,
        );
        assert_eq!(moved.points[0], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(moved.frame, Frame::World);
        assert!(moved.via_mirror[0]);
    }

    #[test]
    fn plane_from_diag_reflection() {
        let m = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, -1.0, 1.0));
        let h = HomogeneousTransform::from_matrix(m).unwrap();
        let p = plane_from_transform(&h, REFLECTION_TOL).unwrap();
        assert_eq!(p.coefficients(), [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn plane_from_proper_rotation_fails() {
        let h = tilt_transform(0.4, 0.1).unwrap();
        assert!(matches!(
            plane_from_transform(&h, REFLECTION_TOL),
            Err(Error::NotAReflection { .. })
        ));
    }

    #[test]
    fn improper_non_reflection_fails() {
        // A reflection followed by a rotation about the plane normal is improper but not a mirror.
        let h = householder_from_plane(&Plane::new(1.0, 0.0, 0.0, -1.0).unwrap());
        let twist = HomogeneousTransform::from_parts(
            axis_angle(&Vector3::x(), 0.3),
            Vector3::zeros(),
        )
        .unwrap();
        assert!(matches!(
            plane_from_transform(&(twist * h), REFLECTION_TOL),
            Err(Error::NotAReflection { .. })
        ));
    }

    #[test]
    fn from_matrix_rejects_bad_bottom_row() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1e-3;
        assert!(HomogeneousTransform::from_matrix(m).is_err());
        let mut skew = Matrix4::identity();
        skew[(0, 1)] = 0.1;
        assert!(HomogeneousTransform::from_matrix(skew).is_err());
    }

    #[test]
    fn orthonormalize_recovers_drifted_rotation() {
        let mut h = tilt_transform(0.3, 0.1).unwrap();
        for _ in 0..10_000 {
            h = h * tilt_transform(0.3 + 1e-7, 0.1).unwrap() * tilt_transform(-0.3, 0.1).unwrap();
        }
        let fixed = h.orthonormalized();
        let r = fixed.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn canonical_sign() {
        let p = Plane::new(-1.0, 0.0, 0.0, 1.2).unwrap().canonical();
        assert_eq!(p.coefficients(), [1.0, 0.0, 0.0, -1.2]);
        let q = Plane::new(0.0, -0.6, 0.8, 0.5).unwrap().canonical();
        assert_eq!(q.coefficients(), [0.0, 0.6, -0.8, -0.5]);
    }
}
