//! 6D spatial algebra on SE(3).
//!
//! Spatial vectors are ordered `[angular; linear]` for motions and
//! `[torque; force]` for forces. A [`Placement`] `M = (R, p)` maps
//! coordinates expressed in a local frame into its reference frame,
//! `x_ref = R x_local + p`.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use std::ops::Mul;

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)]), 0.5 * (m[(1, 0)] - m[(0, 1)]))
}

/// Rigid transform of a frame relative to its reference frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Placement {
    fn default() -> Self {
        Self::identity()
    }
}

impl Placement {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self { rotation, translation: Vector3::zeros() }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Maps a point expressed in the local frame to the reference frame.
    #[inline]
    pub fn act_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self.inverse() * other` without forming the inverse explicitly.
    pub fn inv_times(&self, other: &Placement) -> Placement {
        let rt = self.rotation.transpose();
        Placement { rotation: rt * other.rotation, translation: rt * (other.translation - self.translation) }
    }

    /// Deviation of the rotation block from SO(3), `‖RᵀR − I‖`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn adjoint(&self) -> Adjoint {
        adjoint(self)
    }

    /// Motion `x` expressed in the local frame, re-expressed in the reference frame.
    #[inline]
    pub fn act_motion(&self, x: &Vector6<f64>) -> Vector6<f64> {
        let w = self.rotation * x.fixed_rows::<3>(0);
        let v = self.rotation * x.fixed_rows::<3>(3) + self.translation.cross(&w);
        stack(&w, &v)
    }

    /// Inverse action on motions: reference-frame motion to local-frame motion.
    #[inline]
    pub fn act_inv_motion(&self, x: &Vector6<f64>) -> Vector6<f64> {
        let w = x.fixed_rows::<3>(0).into_owned();
        let v = x.fixed_rows::<3>(3) - self.translation.cross(&w);
        let rt = self.rotation.transpose();
        stack(&(rt * w), &(rt * v))
    }

    /// `Ad(M)⁻ᵀ f`: a force expressed in the local frame re-expressed in the reference frame.
    #[inline]
    pub fn act_force(&self, f: &Vector6<f64>) -> Vector6<f64> {
        let fl = self.rotation * f.fixed_rows::<3>(3);
        let n = self.rotation * f.fixed_rows::<3>(0) + self.translation.cross(&fl);
        stack(&n, &fl)
    }

    /// `Ad(M)ᵀ f`: a force expressed in the reference frame pulled back to the local frame.
    #[inline]
    pub fn act_transpose_force(&self, f: &Vector6<f64>) -> Vector6<f64> {
        let rt = self.rotation.transpose();
        let n = f.fixed_rows::<3>(0).into_owned();
        let fl = f.fixed_rows::<3>(3).into_owned();
        stack(&(rt * (n + fl.cross(&self.translation))), &(rt * fl))
    }
}

impl Mul for Placement {
    type Output = Placement;
    fn mul(self, rhs: Placement) -> Placement {
        Placement {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul for &Placement {
    type Output = Placement;
    fn mul(self, rhs: &Placement) -> Placement {
        *self * *rhs
    }
}

#[inline]
pub fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Spatial velocity: angular part first, then linear.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SpatialMotion(pub Vector6<f64>);

impl SpatialMotion {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self(stack(&angular, &linear))
    }
    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }
    pub fn angular(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }
    pub fn linear(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }
}

/// Spatial force: torque first, then force.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SpatialForce(pub Vector6<f64>);

impl SpatialForce {
    pub fn new(torque: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self(stack(&torque, &force))
    }
    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }
    pub fn torque(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }
    pub fn force(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }
}

/// 6×6 action of a placement on spatial motions.
pub type Adjoint = Matrix6<f64>;

/// `Ad(M) = [[R, 0], [p×R, R]]`, mapping local motions into the reference frame.
pub fn adjoint(m: &Placement) -> Adjoint {
    let r = &m.rotation;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&m.translation) * r));
    ad
}

/// Small adjoint `ad_x`, with `ad_x y = x ×̱ y` the motion cross product.
pub fn motion_cross(x: &Vector6<f64>) -> Matrix6<f64> {
    let w = skew(&x.fixed_rows::<3>(0).into_owned());
    let v = skew(&x.fixed_rows::<3>(3).into_owned());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    m
}

/// `x ×̱ y` without forming the matrix.
#[inline]
pub fn cross_motion(x: &Vector6<f64>, y: &Vector6<f64>) -> Vector6<f64> {
    let w = x.fixed_rows::<3>(0);
    let v = x.fixed_rows::<3>(3);
    let yw = y.fixed_rows::<3>(0);
    let yv = y.fixed_rows::<3>(3);
    stack(&w.cross(&yw), &(w.cross(&yv) + v.cross(&yw)))
}

/// Dual cross product `x ×̱* f = −ad_xᵀ f`.
#[inline]
pub fn cross_force(x: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let w = x.fixed_rows::<3>(0);
    let v = x.fixed_rows::<3>(3);
    let n = f.fixed_rows::<3>(0);
    let fl = f.fixed_rows::<3>(3);
    stack(&(w.cross(&n) + v.cross(&fl)), &w.cross(&fl))
}

/// Commutation of the transposed small adjoint: `ad_xᵀ y = P_y x` for every motion `x`.
///
/// With `y = [m; f]` in torque-first ordering this is `[[m×, f×], [f×, 0]]`.
pub fn p_operator(y: &Vector6<f64>) -> Matrix6<f64> {
    let m = skew(&y.fixed_rows::<3>(0).into_owned());
    let f = skew(&y.fixed_rows::<3>(3).into_owned());
    let mut p = Matrix6::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    p.fixed_view_mut::<3, 3>(0, 3).copy_from(&f);
    p.fixed_view_mut::<3, 3>(3, 0).copy_from(&f);
    p
}

/// SO(3) exponential as a rotation matrix.
pub fn exp3(w: &Vector3<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_scaled_axis(*w).to_rotation_matrix().into_inner()
}

/// Left Jacobian of SO(3) (the `V` matrix of the SE(3) exponential).
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = w.norm_squared();
    let th = th2.sqrt();
    let k = skew(w);
    let (a, b) = if th < 1e-4 {
        (0.5 - th2 / 24.0 + th2 * th2 / 720.0, 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0)
    } else {
        ((1.0 - th.cos()) / th2, (th - th.sin()) / (th2 * th))
    };
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of [`so3_left_jacobian`].
pub fn so3_left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = w.norm_squared();
    let th = th2.sqrt();
    let k = skew(w);
    let c = if th < 1e-4 {
        1.0 / 12.0 + th2 / 720.0 + th2 * th2 / 30240.0
    } else {
        (1.0 - th * th.sin() / (2.0 * (1.0 - th.cos()))) / th2
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// SE(3) exponential of a twist `[ω; v]`.
pub fn exp6(xi: &Vector6<f64>) -> Placement {
    let w = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    Placement { rotation: exp3(&w), translation: so3_left_jacobian(&w) * v }
}

/// SE(3) logarithm, the inverse of [`exp6`] for rotation angles below π.
pub fn log6(m: &Placement) -> Vector6<f64> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(m.rotation);
    let w = UnitQuaternion::from_rotation_matrix(&rot).scaled_axis();
    let v = so3_left_jacobian_inv(&w) * m.translation;
    stack(&w, &v)
}

/// Right Jacobian of SE(3): `exp(ξ + dξ) ≈ exp(ξ)·exp(Jr(ξ) dξ)`.
///
/// Evaluated from the series `Σ (−ad_ξ)^k / (k+1)!`, which is entire.
pub fn se3_right_jacobian(xi: &Vector6<f64>) -> Matrix6<f64> {
    let a = -motion_cross(xi);
    let mut term = Matrix6::identity();
    let mut sum = Matrix6::identity();
    for k in 1..60 {
        term = term * a / (k as f64 + 1.0);
        sum += term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    sum
}
