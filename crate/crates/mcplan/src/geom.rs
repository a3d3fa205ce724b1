//! Rigid-body geometry: rotations, transforms, and the SO(3) maps.
//!
//! Pose-error constraints measure orientation error through the SO(3)
//! logarithm, so `log_so3` has to stay finite and smooth through the
//! zero-rotation singularity. Below [`SMALL_ANGLE`] the `1/sinc` factor is
//! replaced by its Taylor expansion `1 + θ²/6`, which keeps the map
//! differentiable at θ = 0 without a data-dependent cliff. Within
//! [`NEAR_PI`] of a half turn the rotation axis is recovered from the
//! dominant diagonal of `(R + I)/2` instead of the vanishing skew part.

use nalgebra::{Matrix3, Vector3};

/// Angle below which `log_so3`/`exp_so3` switch to series expansions.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Distance from π below which the axis is extracted from `(R + I)/2`.
pub const NEAR_PI: f64 = 1e-6;

/// A 3×3 orthonormal rotation matrix with determinant +1.
///
/// Stored as a dense matrix rather than a quaternion because forward
/// kinematics and the batch kernels consume matrix columns directly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that is already orthonormal with unit determinant.
    ///
    /// Debug builds assert the invariant; use [`Rotation::is_orthonormal`]
    /// to check untrusted data first.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        debug_assert!(
            Self::matrix_is_orthonormal(&m, 1e-7),
            "matrix is not a rotation: {m}"
        );
        Rotation(m)
    }

    /// Rodrigues rotation about `axis` (need not be unit length is not
    /// supported: callers pass unit axes) by `angle` radians.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        exp_so3(&(axis * angle))
    }

    /// Roll-pitch-yaw (extrinsic x-y-z): `Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        let rx = Rotation::from_axis_angle(&Vector3::x(), roll);
        let ry = Rotation::from_axis_angle(&Vector3::y(), pitch);
        let rz = Rotation::from_axis_angle(&Vector3::z(), yaw);
        &(&rz * &ry) * &rx
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Roll-pitch-yaw angles that reproduce this rotation through
    /// [`Rotation::from_rpy`]. At the pitch singularity (`|pitch| = π/2`)
    /// roll is fixed to zero and yaw absorbs the remaining turn.
    pub fn to_rpy(&self) -> [f64; 3] {
        let m = &self.0;
        let sp = -m[(2, 0)];
        if sp.abs() >= 1.0 - 1e-12 {
            let pitch = if sp > 0.0 {
                std::f64::consts::FRAC_PI_2
            } else {
                -std::f64::consts::FRAC_PI_2
            };
            [0.0, pitch, (-m[(0, 1)]).atan2(m[(1, 1)])]
        } else {
            [
                m[(2, 1)].atan2(m[(2, 2)]),
                sp.asin(),
                m[(1, 0)].atan2(m[(0, 0)]),
            ]
        }
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Inverse rotation; for orthonormal matrices this is the transpose.
    pub fn inverse(&self) -> Rotation {
        self.transpose()
    }

    /// Applies the rotation to a vector.
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        Self::matrix_is_orthonormal(&self.0, tol)
    }

    fn matrix_is_orthonormal(m: &Matrix3<f64>, tol: f64) -> bool {
        let gram = m * m.transpose();
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((gram[(i, j)] - target).abs());
            }
        }
        err <= tol && (m.determinant() - 1.0).abs() <= tol
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// An SE(3) pose: rotation plus translation in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation,
        }
    }

    /// Pose built from a translation and roll-pitch-yaw angles.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        RigidTransform {
            rotation: Rotation::from_rpy(rpy[0], rpy[1], rpy[2]),
            translation: Vector3::new(xyz[0], xyz[1], xyz[2]),
        }
    }

    /// Composition `self ∘ other`: apply `other` first in the local frame.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: &self.rotation * &other.rotation,
            translation: self.translation + self.rotation.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot_inv = self.rotation.inverse();
        let translation = -rot_inv.apply(&self.translation);
        RigidTransform {
            rotation: rot_inv,
            translation,
        }
    }

    /// Maps a point from the local frame into the parent frame.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }
}

impl std::ops::Mul for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// A 6-D displacement: translational part in meters, rotational part as an
/// axis-angle vector in radians. Finite by construction even at the log-map
/// singularities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    /// The 6 components in `[linear; angular]` order.
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }
}

/// Pose displacement of `pose` as `[translation; log_so3(rotation)]`.
pub fn pose_twist(pose: &RigidTransform) -> Twist {
    Twist {
        linear: pose.translation,
        angular: log_so3(&pose.rotation),
    }
}

/// Axis-angle vector of the skew part of `r`: `(r − rᵀ)∨ / 2`.
fn vex_half(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (r[(2, 1)] - r[(1, 2)]),
        0.5 * (r[(0, 2)] - r[(2, 0)]),
        0.5 * (r[(1, 0)] - r[(0, 1)]),
    )
}

/// SO(3) logarithm: the axis-angle vector `w` with `‖w‖ = θ ∈ [0, π]`.
///
/// Three regimes:
/// - θ < [`SMALL_ANGLE`]: `w = vex(R)·(1 + θ²/6)`, the first-order Taylor
///   expansion of `1/sinc`, smooth through θ = 0.
/// - θ within [`NEAR_PI`] of π: the skew part vanishes, so the axis comes
///   from the dominant diagonal of `(R + I)/2 = aaᵀ`, with its sign taken
///   from the (tiny) skew part when that is nonzero.
/// - otherwise the exact `θ / sin θ` scaling.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let cos_theta = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let s = vex_half(m); // = sin(θ) · axis

    if theta < SMALL_ANGLE {
        // 1/sinc(θ) ≈ 1 + θ²/6; s itself is already well conditioned here.
        s * (1.0 + theta * theta / 6.0)
    } else if theta > std::f64::consts::PI - NEAR_PI {
        let b = (m + Matrix3::identity()) * 0.5; // = a·aᵀ at θ = π
        let (i0, _) = (0..3)
            .map(|i| (i, b[(i, i)]))
            .fold((0, f64::NEG_INFINITY), |acc, x| {
                if x.1 > acc.1 {
                    x
                } else {
                    acc
                }
            });
        let col = b.column(i0);
        let mut axis = Vector3::new(col[0], col[1], col[2]) / b[(i0, i0)].sqrt();
        axis /= axis.norm();
        // Pick the sign consistent with the residual skew part, if any.
        if s.dot(&axis) < 0.0 {
            axis = -axis;
        }
        axis * theta
    } else {
        s * (theta / theta.sin())
    }
}

/// SO(3) exponential (Rodrigues), with the same `sinc` regularization near
/// zero as [`log_so3`] so the two maps round-trip.
pub fn exp_so3(w: &Vector3<f64>) -> Rotation {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        // sinc θ ≈ 1 − θ²/6, (1 − cos θ)/θ² ≈ 1/2 − θ²/24
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    Rotation(Matrix3::identity() + k * a + (k * k) * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = RigidTransform::from_xyz_rpy([0.3, -0.2, 0.9], [0.4, -0.7, 1.1]);
        let id = RigidTransform::identity();
        let c = id.compose(&t);
        assert_relative_eq!(c.translation, t.translation, epsilon = 1e-12);

        let back = t.compose(&t.inverse());
        assert!(back.translation.norm() < 1e-9);
        assert!((back.rotation.matrix() - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn compose_collinear_translations() {
        let a = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0));
        let c = a.compose(&b);
        assert_relative_eq!(c.translation, Vector3::new(3.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn compose_is_associative() {
        let t1 = RigidTransform::from_xyz_rpy([0.1, 0.2, 0.3], [0.5, 0.0, -0.3]);
        let t2 = RigidTransform::from_xyz_rpy([-0.4, 0.0, 0.2], [0.0, 1.0, 0.4]);
        let t3 = RigidTransform::from_xyz_rpy([0.0, 0.7, -0.1], [-0.2, 0.3, 0.0]);
        let left = t1.compose(&t2).compose(&t3);
        let right = t1.compose(&t2.compose(&t3));
        assert!((left.translation - right.translation).norm() < 1e-12);
        assert!((left.rotation.matrix() - right.rotation.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log_so3(&Rotation::identity()), Vector3::zeros());
    }

    #[test]
    fn log_of_quarter_turn_about_z() {
        let r = Rotation::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let w = log_so3(&r);
        assert_relative_eq!(
            w,
            Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            epsilon = 1e-12
        );
    }

    /// For a tiny rotation the matrix can be written down term by term from
    /// the Rodrigues series itself, which serves as the independent oracle:
    /// every term beyond the ones kept is below f64 resolution.
    #[test]
    fn log_of_tiny_rotation_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let axis = random_unit_axis(&mut rng);
            let theta = 1e-9;
            let w = axis * theta;
            let k = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
            // R = I + K + K²/2 exactly, to beyond f64 precision at θ = 1e-9.
            let r = Rotation::from_matrix(Matrix3::identity() + k + (k * k) * 0.5);
            let log = log_so3(&r);
            assert!((log - w).norm() < 1e-12, "axis {axis:?}");
        }
    }

    #[test]
    fn exp_zero_is_identity() {
        let r = exp_so3(&Vector3::zeros());
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn exp_half_turn_about_z() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((r.matrix() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let axis = random_unit_axis(&mut rng);
            let theta = rng.gen_range(1e-12..std::f64::consts::PI - 0.05);
            let r = Rotation::from_axis_angle(&axis, theta);
            let back = exp_so3(&log_so3(&r));
            assert!(
                (back.matrix() - r.matrix()).abs().max() < 1e-9,
                "θ = {theta}"
            );
        }
    }

    #[test]
    fn log_is_continuous_across_small_angle_switch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let axis = random_unit_axis(&mut rng);
            let below = log_so3(&Rotation::from_axis_angle(&axis, SMALL_ANGLE * (1.0 - 1e-9)));
            let above = log_so3(&Rotation::from_axis_angle(&axis, SMALL_ANGLE * (1.0 + 1e-9)));
            assert!((below - above).norm() < 1e-10);
        }
    }

    #[test]
    fn log_norm_matches_trace_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let axis = random_unit_axis(&mut rng);
            let theta = rng.gen_range(1e-6..std::f64::consts::PI - 0.01);
            let r = Rotation::from_axis_angle(&axis, theta);
            let w = log_so3(&r);
            let trace_angle = (0.5 * (r.matrix().trace() - 1.0)).clamp(-1.0, 1.0).acos();
            assert!((w.norm() - trace_angle).abs() < 1e-9);
        }
    }

    #[test]
    fn log_near_pi_stays_finite_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let axis = random_unit_axis(&mut rng);
            let theta = std::f64::consts::PI - rng.gen_range(0.0..1e-7);
            let r = Rotation::from_axis_angle(&axis, theta);
            let w = log_so3(&r);
            assert!(w.iter().all(|x| x.is_finite()));
            let back = exp_so3(&w);
            assert!((back.matrix() - r.matrix()).abs().max() < 1e-6);
        }
    }
}
