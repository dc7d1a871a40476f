//! Rigid-body transforms on SE(3).
//!
//! Tangent vectors are ordered rotation first, `[wx, wy, wz, vx, vy, vz]`.
//! Perturbations are applied on the right, `T * exp(delta)`, everywhere in the
//! crate, and all Jacobians below follow that convention.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, Unit, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Largest rotation angle accepted by [`log_map`].
pub const LOG_ANGLE_LIMIT: f64 = std::f64::consts::PI - 1e-6;

const SMALL_ANGLE: f64 = 1e-3;

/// Element of the SE(3) tangent space, `[omega, v]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist6(pub Vector6<f64>);

impl Twist6 {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist6(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
    }

    pub fn zero() -> Self {
        Twist6(Vector6::zeros())
    }

    pub fn from_slice(xs: &[f64; 6]) -> Self {
        Twist6(Vector6::from_column_slice(xs))
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into()
    }

    pub fn v(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Twist6(self.0 * s)
    }
}

/// A rigid transform `x -> R x + t`.
///
/// A transform named `a_from_b` maps coordinates in frame `b` into frame `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let q = self.rotation.quaternion();
        write!(
            f,
            "t=[{:.6}, {:.6}, {:.6}] q=[{:.9}, {:.9}, {:.9}, {:.9}]",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Pure z translation, `Tz(h)`.
    pub fn z_shift(h: f64) -> Self {
        Self::from_translation(0.0, 0.0, h)
    }

    /// Rotation from roll/pitch/yaw in radians (`Rz(yaw) Ry(pitch) Rx(roll)`).
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_euler_angles(roll, pitch, yaw), translation)
    }

    /// Builds a transform from a serialized `[qx, qy, qz, qw]` quaternion, normalizing it.
    pub fn from_xyzw(translation: [f64; 3], q: [f64; 4]) -> Self {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        Self::new(
            UnitQuaternion::from_quaternion(quat),
            Vector3::from(translation),
        )
    }

    /// Quaternion in serialized `[qx, qy, qz, qw]` order with `qw >= 0`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
        Self::new(
            UnitQuaternion::from_rotation_matrix(&rot),
            m.fixed_view::<3, 1>(0, 3).into(),
        )
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }

    /// `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist6) -> RigidTransform {
        self.compose(&exp_map(delta))
    }

    /// Adjoint in `[omega, v]` ordering: `exp(Ad * xi) = T exp(xi) T^-1`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.translation) * r));
        ad
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &'a RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Skew-symmetric matrix with `hat(a) * b = a x b`.
pub fn hat(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (w, s) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0,
            0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0,
        )
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    let q = Quaternion::new(w, s * omega.x, s * omega.y, s * omega.z);
    UnitQuaternion::new_normalize(q)
}

fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let sin_half = v.norm();
    if sin_half < 1e-10 {
        // theta / sin(theta/2) -> 2 / w near zero
        return v * (2.0 / w) * (1.0 - sin_half * sin_half / (3.0 * w * w));
    }
    let theta = 2.0 * sin_half.atan2(w);
    v * (theta / sin_half)
}

/// Coefficients `(1 - cos t)/t^2` and `(t - sin t)/t^3`.
fn jacobian_coeffs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE {
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let half_sin = (0.5 * theta).sin();
        (
            2.0 * half_sin * half_sin / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// SO(3) left Jacobian; also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (b, c) = jacobian_coeffs(omega.norm());
    let w = hat(omega);
    Matrix3::identity() + w * b + w * w * c
}

pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / t2
    };
    let w = hat(omega);
    Matrix3::identity() - w * 0.5 + w * w * d
}

/// SE(3) exponential.
pub fn exp_map(xi: &Twist6) -> RigidTransform {
    let omega = xi.omega();
    RigidTransform {
        rotation: so3_exp(&omega),
        translation: so3_left_jacobian(&omega) * xi.v(),
    }
}

/// SE(3) logarithm; rejects rotations within `1e-6` of pi.
pub fn log_map(t: &RigidTransform) -> Result<Twist6> {
    let angle = t.angle();
    if angle >= LOG_ANGLE_LIMIT {
        return Err(Error::AngleNearPi { angle });
    }
    let omega = so3_log(&t.rotation);
    let v = so3_left_jacobian_inv(&omega) * t.translation;
    Ok(Twist6::new(omega, v))
}

/// Off-diagonal block of the SE(3) left Jacobian.
fn se3_q_block(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        (
            1.0 / 6.0 - t2 / 120.0,
            1.0 / 24.0 - t2 / 720.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let p = hat(omega);
    let r = hat(v);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// SE(3) left Jacobian in `[omega, v]` ordering.
pub fn se3_left_jacobian(xi: &Twist6) -> Matrix6<f64> {
    let omega = xi.omega();
    let j = so3_left_jacobian(&omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&se3_q_block(&omega, &xi.v()));
    out
}

/// Inverse of the SE(3) right Jacobian: `log(exp(xi) exp(d)) ~ xi + Jr^-1(xi) d`.
pub fn se3_right_jacobian_inv(xi: &Twist6) -> Matrix6<f64> {
    let neg = xi.scaled(-1.0);
    let omega = neg.omega();
    let jinv = so3_left_jacobian_inv(&omega);
    let q = se3_q_block(&omega, &neg.v());
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-(jinv * q * jinv)));
    out
}

/// Plane `n . x + d = 0` with unit normal and `n_z >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneModel {
    pub normal: Unit<Vector3<f64>>,
    pub intercept: f64,
}

impl PlaneModel {
    /// Normalizes and canonicalizes the orientation so that `n_z >= 0`.
    pub fn new(normal: Vector3<f64>, intercept: f64) -> Self {
        let norm = normal.norm();
        let (mut n, mut d) = (normal / norm, intercept / norm);
        if n.z < 0.0 {
            n = -n;
            d = -d;
        }
        Self {
            normal: Unit::new_unchecked(n),
            intercept: d,
        }
    }

    /// The plane `z = 0`.
    pub fn horizontal() -> Self {
        Self::new(Vector3::z(), 0.0)
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.intercept
    }

    /// Re-expresses a plane given in frame `a` in frame `b`, where `a_from_b` maps `b` into `a`.
    pub fn pulled_back(&self, a_from_b: &RigidTransform) -> PlaneModel {
        let n = a_from_b.rotation.inverse() * self.normal.into_inner();
        let d = self.intercept + self.normal.dot(&a_from_b.translation);
        PlaneModel::new(n, d)
    }

    /// Re-expresses a plane given in frame `b` in frame `a`.
    pub fn pushed_forward(&self, a_from_b: &RigidTransform) -> PlaneModel {
        let n = a_from_b.rotation * self.normal.into_inner();
        let d = self.intercept - n.dot(&a_from_b.translation);
        PlaneModel::new(n, d)
    }

    /// Tilt from horizontal, radians.
    pub fn tilt(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos()
    }
}

/// Transform that rotates `source.normal` onto `target.normal` (Rodrigues about
/// their common perpendicular) and shifts by `[0, 0, d_source - d_target]`.
///
/// Parallel normals yield the identity rotation. Antiparallel normals are outside
/// the contract; canonical planes never produce them.
pub fn rotation_between_planes(source: &PlaneModel, target: &PlaneModel) -> RigidTransform {
    let n1 = source.normal.into_inner();
    let n2 = target.normal.into_inner();
    let cross = n1.cross(&n2);
    let s = cross.norm();
    let rotation = if s < 1e-9 {
        UnitQuaternion::identity()
    } else {
        let axis = Unit::new_unchecked(cross / s);
        let theta = n1.dot(&n2).clamp(-1.0, 1.0).acos();
        UnitQuaternion::from_axis_angle(&axis, theta)
    };
    RigidTransform::new(
        rotation,
        Vector3::new(0.0, 0.0, source.intercept - target.intercept),
    )
}

/// Rotation and translation discrepancy between an estimate and ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrinsicError {
    pub rot_deg: f64,
    pub trans_m: f64,
}

pub fn extrinsic_error(estimate: &RigidTransform, ground_truth: &RigidTransform) -> ExtrinsicError {
    let rel = ground_truth.rotation.inverse() * estimate.rotation;
    ExtrinsicError {
        rot_deg: so3_log(&rel).norm().to_degrees(),
        trans_m: (ground_truth.translation - estimate.translation).norm(),
    }
}

/// A transform stamped with a time in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub time: f64,
    pub pose: RigidTransform,
}

impl StampedPose {
    pub fn new(time: f64, pose: RigidTransform) -> Self {
        Self { time, pose }
    }
}

/// Geodesic interpolation `a * exp(s * log(a^-1 b))`.
pub fn interpolate_pose(a: &StampedPose, b: &StampedPose, t: f64) -> Result<RigidTransform> {
    if !(a.time <= t && t <= b.time) || a.time >= b.time {
        return Err(Error::OutOfRange {
            t,
            start: a.time,
            end: b.time,
        });
    }
    if t == a.time {
        return Ok(a.pose);
    }
    if t == b.time {
        return Ok(b.pose);
    }
    let s = (t - a.time) / (b.time - a.time);
    let delta = log_map(&a.pose.inverse().compose(&b.pose))?;
    Ok(a.pose.compose(&exp_map(&delta.scaled(s))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// 4x4 matrix exponential by scaling and squaring with a Taylor core.
    fn matrix_exp(m: &Matrix4<f64>) -> Matrix4<f64> {
        let norm = m.abs().max();
        let mut squarings = 0;
        let mut scaled = *m;
        while scaled.abs().max() > 0.01 {
            scaled /= 2.0;
            squarings += 1;
        }
        let _ = norm;
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..20 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    fn twist_matrix(xi: &Twist6) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.omega()));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v());
        m
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let t = exp_map(&Twist6::zero());
        assert_eq!(t.translation, Vector3::zeros());
        assert_eq!(t.angle(), 0.0);
    }

    #[test]
    fn exp_of_height_observation() {
        let t = exp_map(&Twist6::from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.8]));
        assert_eq!(t.translation, Vector3::new(0.0, 0.0, 1.8));
        assert_eq!(t.angle(), 0.0);
    }

    #[test]
    fn exp_matches_matrix_exponential() {
        let xi = Twist6::from_slice(&[0.0, 0.0, FRAC_PI_2, 1.0, 0.0, 0.0]);
        let t = exp_map(&xi);
        let oracle = matrix_exp(&twist_matrix(&xi));
        assert_relative_eq!(t.matrix(), oracle, epsilon = 1e-12);
        assert_relative_eq!(t.angle(), FRAC_PI_2, epsilon = 1e-12);
        // V * v for a quarter turn: (sin(t)/t, (1-cos(t))/t, 0)
        assert_relative_eq!(t.translation.x, 2.0 / PI, epsilon = 1e-12);
        assert_relative_eq!(t.translation.y, 2.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn log_of_identity_and_translation() {
        assert_eq!(log_map(&RigidTransform::identity()).unwrap(), Twist6::zero());
        let xi = log_map(&RigidTransform::from_translation(0.0, 0.0, 2.5)).unwrap();
        assert_eq!(xi.0, Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 2.5));
    }

    #[test]
    fn log_rejects_half_turn() {
        let t = RigidTransform::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
        assert!(matches!(log_map(&t), Err(Error::AngleNearPi { .. })));
    }

    #[test]
    fn small_angle_branches_agree() {
        for theta in [0.99e-3, 1.01e-3, 1e-6] {
            let xi = Twist6::from_slice(&[theta, 0.0, 0.0, 0.3, -0.2, 0.1]);
            let oracle = matrix_exp(&twist_matrix(&xi));
            assert_relative_eq!(exp_map(&xi).matrix(), oracle, epsilon = 1e-14);
            let back = log_map(&exp_map(&xi)).unwrap();
            assert_relative_eq!(back.0, xi.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn plane_rotation_examples() {
        let z = PlaneModel::horizontal();
        let t = rotation_between_planes(&z, &z);
        assert_eq!(t, RigidTransform::identity());

        let x = PlaneModel {
            normal: Vector3::x_axis(),
            intercept: 0.0,
        };
        let t = rotation_between_planes(&x, &z);
        assert_relative_eq!(t.rotate(&Vector3::x()), Vector3::z(), epsilon = 1e-12);
        let axis = t.rotation.axis().unwrap();
        assert_relative_eq!(axis.into_inner(), -Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(t.angle(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn plane_rotation_translation_is_intercept_difference() {
        let source = PlaneModel::new(Vector3::z(), 1.5);
        let t = rotation_between_planes(&source, &PlaneModel::horizontal());
        assert_eq!(t.angle(), 0.0);
        assert_eq!(t.translation, Vector3::new(0.0, 0.0, 1.5));
    }

    #[test]
    fn extrinsic_error_examples() {
        let gt = RigidTransform::from_translation(1.0, 0.0, 0.0);
        assert_eq!(extrinsic_error(&gt, &gt), ExtrinsicError { rot_deg: 0.0, trans_m: 0.0 });

        let rotated = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians()),
            gt.translation,
        );
        let e = extrinsic_error(&rotated, &gt);
        assert_relative_eq!(e.rot_deg, 10.0, epsilon = 1e-10);
        assert_eq!(e.trans_m, 0.0);

        let shifted = RigidTransform::from_translation(1.0, 0.0, 0.3);
        let e = extrinsic_error(&shifted, &gt);
        assert_eq!(e.rot_deg, 0.0);
        assert_relative_eq!(e.trans_m, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn interpolation_examples() {
        let a = StampedPose::new(1.0, RigidTransform::identity());
        let b = StampedPose::new(3.0, RigidTransform::from_translation(2.0, 0.0, 0.0));
        assert_eq!(interpolate_pose(&a, &b, 1.0).unwrap(), a.pose);
        assert_eq!(interpolate_pose(&a, &b, 3.0).unwrap(), b.pose);
        let mid = interpolate_pose(&a, &b, 2.0).unwrap();
        assert_relative_eq!(mid.translation, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert!(matches!(
            interpolate_pose(&a, &b, 3.5),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn interpolation_matches_slerp() {
        let qa = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.2);
        let qb = qa * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let a = StampedPose::new(0.0, RigidTransform::from_rotation(qa));
        let b = StampedPose::new(1.0, RigidTransform::from_rotation(qb));
        let mid = interpolate_pose(&a, &b, 0.5).unwrap();
        let oracle = qa.slerp(&qb, 0.5);
        assert!(mid.rotation.angle_to(&oracle) < 1e-12);
        assert_relative_eq!(
            (qa.inverse() * mid.rotation).angle(),
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn right_jacobian_inverse_matches_finite_differences() {
        let xi = Twist6::from_slice(&[0.4, -1.1, 0.7, 0.5, -2.0, 1.3]);
        let base = exp_map(&xi);
        let jinv = se3_right_jacobian_inv(&xi);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = log_map(&base.retract(&Twist6(d))).unwrap().0;
            let minus = log_map(&base.retract(&Twist6(-d))).unwrap().0;
            let col = (plus - minus) / (2.0 * h);
            for r in 0..6 {
                assert!(
                    (col[r] - jinv[(r, k)]).abs() < 1e-7,
                    "entry ({r},{k}): {} vs {}",
                    col[r],
                    jinv[(r, k)]
                );
            }
        }
        // inverse of the left Jacobian at -xi
        let prod = se3_left_jacobian(&xi.scaled(-1.0)) * jinv;
        assert_relative_eq!(prod, Matrix6::identity(), epsilon = 1e-12);
    }

    #[test]
    fn adjoint_conjugates_exponential() {
        let t = exp_map(&Twist6::from_slice(&[0.3, 0.2, -0.5, 1.0, 2.0, -0.5]));
        let xi = Twist6::from_slice(&[0.1, -0.2, 0.05, 0.3, 0.0, 0.4]);
        let lhs = exp_map(&Twist6(t.adjoint() * xi.0));
        let rhs = t.compose(&exp_map(&xi)).compose(&t.inverse());
        assert_relative_eq!(lhs.matrix(), rhs.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn plane_frame_changes_round_trip() {
        let plane = PlaneModel::new(Vector3::new(0.1, -0.2, 1.0), 1.7);
        let t = exp_map(&Twist6::from_slice(&[0.05, 0.1, 0.8, 1.0, -3.0, 0.4]));
        let p_b = Vector3::new(0.3, 0.7, -0.2);
        let in_b = plane.pulled_back(&t);
        assert_relative_eq!(
            in_b.signed_distance(&p_b),
            plane.signed_distance(&t.apply(&p_b)),
            epsilon = 1e-12
        );
        let back = in_b.pushed_forward(&t);
        assert_relative_eq!(back.normal.into_inner(), plane.normal.into_inner(), epsilon = 1e-12);
        assert_relative_eq!(back.intercept, plane.intercept, epsilon = 1e-12);
    }
}
