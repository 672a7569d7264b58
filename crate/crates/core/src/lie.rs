//! SE(3) / SO(3) group operations.
//!
//! Transforms are stored as a rotation matrix plus a translation vector and
//! act on points as `x -> R x + t`. Twists pair a rotational 3-vector `rho`
//! (axis times angle) with a translational 3-vector `nu`.
//!
//! The default exponential is the coupled SE(3) map, where the translation of
//! `exp(rho, nu)` is `V(rho) nu` with `V` the left Jacobian of SO(3).
//! [`TangentMap::Decoupled`] treats the group as SO(3) x R^3 instead.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6, SVD};
use serde::{Deserialize, Serialize};

use crate::data::PointCloud;
use crate::error::{Error, Result};

/// Below this angle the closed forms switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Logarithm refuses rotations at or beyond `PI - CUT_LOCUS_MARGIN`.
pub const CUT_LOCUS_MARGIN: f64 = 1e-6;
/// Orthonormality defect (Frobenius) that triggers re-projection onto SO(3).
pub const ORTHO_DEFECT_TOL: f64 = 1e-7;

/// A 3x3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking it. Use [`Rotation::from_matrix`] for
    /// untrusted input.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects `m` onto the nearest rotation when it is close to one.
    pub fn from_matrix(m: Matrix3<f64>) -> Option<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return None;
        }
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        if defect > 1e-3 || m.determinant() <= 0.0 {
            return None;
        }
        Some(Rotation(m).renormalized())
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        so3_exp(&(axis * (angle / n)))
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Polar projection onto SO(3) (closest rotation in Frobenius norm).
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = SVD::new(*m, true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = u * d * v_t;
        }
        Rotation(r)
    }

    /// Re-projects onto SO(3) only when drift exceeds [`ORTHO_DEFECT_TOL`].
    pub fn renormalized(self) -> Self {
        if self.orthonormality_defect() > ORTHO_DEFECT_TOL {
            Self::project(&self.0)
        } else {
            self
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let (cos, sin) = self.cos_sin();
        sin.atan2(cos)
    }

    fn cos_sin(&self) -> (f64, f64) {
        let cos = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = (skew_part(&self.0)).norm();
        (cos, sin)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0).renormalized()
    }
}

/// Selects which exponential/logarithm pair is used on twists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentMap {
    /// Standard SE(3) exponential with the left-Jacobian coupling.
    #[default]
    Coupled,
    /// SO(3) x R^3 product map: translation passes through unchanged.
    Decoupled,
}

impl TangentMap {
    pub fn exp(self, xi: &Twist) -> RigidTransform {
        match self {
            TangentMap::Coupled => exp(xi),
            TangentMap::Decoupled => RigidTransform::new(so3_exp(&xi.rho), xi.nu),
        }
    }

    pub fn log(self, h: &RigidTransform) -> Result<Twist> {
        match self {
            TangentMap::Coupled => log(h),
            TangentMap::Decoupled => Ok(Twist::new(so3_log(&h.rotation)?, h.translation)),
        }
    }
}

/// Element of se(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    /// Rotational part, axis times angle in radians.
    pub rho: Vector3<f64>,
    /// Translational part.
    pub nu: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, nu: Vector3<f64>) -> Self {
        Twist { rho, nu }
    }

    pub fn zero() -> Self {
        Twist::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Layout `[rho; nu]`.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.nu.x, self.nu.y, self.nu.z,
        )
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist::new(self.rho * s, self.nu * s)
    }

    pub fn norm_inf(&self) -> f64 {
        self.to_vector().amax()
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }
}

impl Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.rho + rhs.rho, self.nu + rhs.nu)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;

    fn mul(self, s: f64) -> Twist {
        self.scale(s)
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// Homogeneous 4x4 form.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Accepts a homogeneous matrix whose bottom row is `(0, 0, 0, 1)` and
    /// whose upper-left block is (close to) a rotation.
    pub fn from_matrix(m: &Matrix4<f64>) -> Option<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return None;
        }
        let r = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        if !t.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self::new(r, t))
    }

    /// Row-major 4x4 entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Option<Self> {
        if v.len() != 16 {
            return None;
        }
        Self::from_matrix(&Matrix4::from_row_slice(v))
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -rt.rotate(&self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::new(
            cloud
                .points()
                .iter()
                .map(|p| self.transform_point(p))
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.to_matrix() - other.to_matrix()).amax()
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.to_matrix();
        for r in 0..4 {
            writeln!(
                f,
                "{:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                m[(r, 0)],
                m[(r, 1)],
                m[(r, 2)],
                m[(r, 3)]
            )?;
        }
        Ok(())
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `vee((m - mᵀ) / 2)`, equal to `sin(θ) a` for a rotation about unit axis `a`.
fn skew_part(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5
}

/// Rodrigues formula.
pub fn so3_exp(rho: &Vector3<f64>) -> Rotation {
    let theta = rho.norm();
    let w = hat(rho);
    let w2 = w * w;
    let m = if theta < SMALL_ANGLE {
        Matrix3::identity() + w + w2 * 0.5
    } else {
        let half = 0.5 * theta;
        let a = theta.sin() / theta;
        let b = 2.0 * (half.sin() / theta).powi(2);
        Matrix3::identity() + w * a + w2 * b
    };
    Rotation(m)
}

/// Principal-branch SO(3) logarithm.
pub fn so3_log(r: &Rotation) -> Result<Vector3<f64>> {
    let (cos, sin) = r.cos_sin();
    let theta = sin.atan2(cos);
    if theta >= PI - CUT_LOCUS_MARGIN {
        return Err(Error::NearCutLocus { angle: theta });
    }
    let s = skew_part(r.matrix());
    if theta < SMALL_ANGLE {
        return Ok(s * (1.0 + theta * theta / 6.0));
    }
    if cos > -0.5 {
        return Ok(s * (theta / sin));
    }
    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 - cos) a aᵀ and take the sign from `s`.
    let m = r.matrix();
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let j = (0..3)
        .max_by(|&i, &k| b[(i, i)].total_cmp(&b[(k, k)]))
        .unwrap_or(0);
    let mut axis = b.column(j).into_owned();
    axis /= axis.norm();
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Left Jacobian of SO(3).
pub fn left_jacobian(rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = rho.norm();
    let w = hat(rho);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + w * 0.5 + w2 / 6.0;
    }
    let half = 0.5 * theta;
    let b = 2.0 * (half.sin() / theta).powi(2);
    let c = (theta - theta.sin()) / (theta * theta * theta);
    Matrix3::identity() + w * b + w2 * c
}

/// Inverse of [`left_jacobian`].
pub fn left_jacobian_inv(rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = rho.norm();
    let w = hat(rho);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - w * 0.5 + w2 / 12.0;
    }
    let half = 0.5 * theta;
    // 1 - θ sinθ / (2(1 - cosθ)) = 1 - (θ/2) cot(θ/2)
    let c = (1.0 - half / half.tan()) / (theta * theta);
    Matrix3::identity() - w * 0.5 + w2 * c
}

/// Coupled SE(3) exponential.
pub fn exp(xi: &Twist) -> RigidTransform {
    RigidTransform::new(so3_exp(&xi.rho), left_jacobian(&xi.rho) * xi.nu)
}

/// Coupled SE(3) logarithm on the principal branch.
pub fn log(h: &RigidTransform) -> Result<Twist> {
    let rho = so3_log(&h.rotation)?;
    Ok(Twist::new(rho, left_jacobian_inv(&rho) * h.translation))
}

/// Geodesic interpolation between the identity (`s = 0`) and `h0` (`s = 1`):
/// `Exp((1 - s) Log(h0⁻¹)) h0`.
pub fn interpolate(s: f64, h0: &RigidTransform) -> Result<RigidTransform> {
    interpolate_with(TangentMap::Coupled, s, h0)
}

pub fn interpolate_with(map: TangentMap, s: f64, h0: &RigidTransform) -> Result<RigidTransform> {
    let rel = map.log(&h0.inverse())?;
    Ok(map.exp(&rel.scale(1.0 - s)).compose(h0))
}

/// Rotation angle of `a⁻¹ b` and the distance between the translations.
pub fn geodesic_distance(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    let rot = crate::metrics::rotation_error(&a.rotation, &b.rotation);
    let trans = (a.translation - b.translation).norm();
    (rot, trans)
}
