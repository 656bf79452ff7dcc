//! SO(3) and SE(3) primitives.
//!
//! Everything here is a pure function over small fixed-size matrices. Rotations
//! are stored as 3×3 matrices (no quaternions) so the filter and the truth
//! simulator share exactly one representation. Nothing in this module
//! re-orthonormalizes silently; [`project_so3`] exists for offline use only.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;

/// Tolerance used by [`Rotation::from_matrix`] for both orthogonality and determinant.
pub const ROTATION_TOL: f64 = 1e-9;

/// Below this angle `exp_so3` switches to its Taylor branch.
const EXP_TAYLOR_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("matrix is not a rotation: |RᵀR - I|_F = {orthogonality:e}, det = {det}")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("cannot project matrix with det = {det:e} onto SO(3)")]
    Degenerate { det: f64 },
}

/// Skew-symmetric cross-product matrix: `hat(v) * w == v.cross(&w)`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. The input is antisymmetrized first, so any symmetric
/// part is discarded.
#[inline]
pub fn vex(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map so(3) → SO(3), closed-form Rodrigues evaluation.
pub fn exp_so3(v: &Vec3) -> Rotation {
    let theta_sq = v.norm_squared();
    let theta = theta_sq.sqrt();
    let k = hat(v);
    // a = sin θ / θ, b = (1 - cos θ) / θ²
    let (a, b) = if theta < EXP_TAYLOR_THRESHOLD {
        (
            1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0,
            0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// `Ad_R v`, i.e. the vector whose hat is `R hat(v) Rᵀ`.
#[inline]
pub fn adjoint_apply(r: &Rotation, v: &Vec3) -> Vec3 {
    r.0 * v
}

/// Rotation angle of `q` in `[0, π]`.
///
/// `atan2(sin θ, cos θ)` with `sin θ = ‖vex(q − qᵀ)‖/2`, which stays accurate
/// near 0 where `acos` of the trace loses half the digits.
pub fn principal_angle(q: &Rotation) -> f64 {
    let c = ((q.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = (vex(&(q.0 - q.0.transpose())).norm() * 0.5).min(1.0);
    s.atan2(c)
}

/// Nearest rotation in the Frobenius norm (orthogonal polar factor).
///
/// Fails when `det(m) <= 0` or `m` is numerically singular.
pub fn project_so3(m: &Mat3) -> Result<Rotation, LieError> {
    let det = m.determinant();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if !det.is_finite() || det <= 1e-12 * scale * scale * scale {
        return Err(LieError::Degenerate { det });
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(LieError::Degenerate { det }),
    };
    Ok(Rotation(u * v_t))
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Checked constructor: `‖RᵀR − I‖_F ≤ 1e−9` and `|det R − 1| ≤ 1e−9`.
    pub fn from_matrix(m: Mat3) -> Result<Self, LieError> {
        let orthogonality = orthogonality_error(&m);
        let det = m.determinant();
        if orthogonality <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL {
            Ok(Rotation(m))
        } else {
            Err(LieError::NotARotation { orthogonality, det })
        }
    }

    /// Wraps `m` without checking. Callers guarantee the invariants.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    #[inline]
    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    #[inline]
    pub fn inverse(&self) -> Rotation {
        self.transpose()
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// `‖RᵀR − I‖_F`, the drift diagnostic.
    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.0)
    }
}

fn orthogonality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// An element of SE(3): `[R b; 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Rotation,
    pub trans: Vec3,
}

impl Pose {
    pub fn new(rot: Rotation, trans: Vec3) -> Self {
        Pose { rot, trans }
    }

    pub fn identity() -> Self {
        Pose {
            rot: Rotation::identity(),
            trans: Vec3::zeros(),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut g = Matrix4::identity();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        g.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        g
    }
}

/// `a · b`.
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rot: a.rot * b.rot,
        trans: a.rot.rotate(&b.trans) + a.trans,
    }
}

pub fn pose_inverse(a: &Pose) -> Pose {
    let rt = a.rot.transpose();
    Pose {
        trans: -rt.rotate(&a.trans),
        rot: rt,
    }
}

/// `R p + b`.
pub fn pose_act(a: &Pose, p: &Vec3) -> Vec3 {
    a.rot.rotate(p) + a.trans
}

/// Stacked body-frame velocity `ξ = [Ω; v]`. Also used for the velocity
/// estimation error `φ = [ω; v]`, which has the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneralizedVelocity {
    /// Angular part (rad/s).
    pub omega: Vec3,
    /// Translational part (m/s).
    pub vel: Vec3,
}

impl GeneralizedVelocity {
    pub fn new(omega: Vec3, vel: Vec3) -> Self {
        GeneralizedVelocity { omega, vel }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vec6(x: &Vec6) -> Self {
        GeneralizedVelocity {
            omega: x.fixed_rows::<3>(0).into_owned(),
            vel: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.vel.x,
            self.vel.y,
            self.vel.z,
        )
    }

    pub fn norm_squared(&self) -> f64 {
        self.omega.norm_squared() + self.vel.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.vel.iter()).all(|x| x.is_finite())
    }
}

impl Add for GeneralizedVelocity {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        GeneralizedVelocity::new(self.omega + rhs.omega, self.vel + rhs.vel)
    }
}

impl Sub for GeneralizedVelocity {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        GeneralizedVelocity::new(self.omega - rhs.omega, self.vel - rhs.vel)
    }
}

impl Neg for GeneralizedVelocity {
    type Output = Self;
    fn neg(self) -> Self {
        GeneralizedVelocity::new(-self.omega, -self.vel)
    }
}

impl Mul<f64> for GeneralizedVelocity {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        GeneralizedVelocity::new(self.omega * s, self.vel * s)
    }
}
