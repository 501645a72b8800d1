//! Orientation value types and rotation arithmetic.
//!
//! Quaternions are Hamilton-convention `(w, x, y, z)`; matrices are row-major
//! 3×3 and act on column vectors. The relative rotation between two
//! orientations is always `R_rel = R_goal · R_currentᵀ` (world frame).

use std::f64::consts::PI;
use std::ops::Mul;

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm below which a raw quaternion cannot be normalized.
pub const QUAT_NORM_EPS: f64 = 1e-12;
/// Norm guard for the Gram–Schmidt projection.
pub const PROJECT_EPS: f64 = 1e-9;
/// Orthogonality tolerance accepted by [`RotMat::from_rows`].
pub const ROTATION_TOL: f64 = 1e-4;
/// Upper clamp for the arcsin argument on the gradient path.
const ASIN_GRAD_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotError {
    #[error("quaternion norm {0:e} is too small to normalize")]
    ZeroNorm(f64),
    #[error("matrix is not a rotation (orthogonality residual {residual:e}, det {det})")]
    NotARotation { residual: f64, det: f64 },
    #[error("degenerate 6-vector: {0}")]
    Degenerate(&'static str),
}

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Unit quaternion `(w, x, y, z)`. `q` and `-q` describe the same orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes a raw 4-vector `(w, x, y, z)`.
    pub fn normalize(raw: [f64; 4]) -> Result<Self, RotError> {
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > QUAT_NORM_EPS) {
            return Err(RotError::ZeroNorm(n));
        }
        Ok(Self {
            w: raw[0] / n,
            x: raw[1] / n,
            y: raw[2] / n,
            z: raw[3] / n,
        })
    }

    /// Restores components previously taken from [`UnitQuaternion::to_array`]
    /// without renormalizing, so stored values come back bit-exactly.
    /// Fails if the input is not unit length within `1e-9`.
    pub fn from_stored(raw: [f64; 4]) -> Result<Self, RotError> {
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((n - 1.0).abs() < 1e-9) {
            return Err(RotError::ZeroNorm(n));
        }
        Ok(Self {
            w: raw[0],
            x: raw[1],
            y: raw[2],
            z: raw[3],
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self, RotError> {
        let n = norm3(&axis);
        if !(n > QUAT_NORM_EPS) {
            return Err(RotError::ZeroNorm(n));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Self::normalize([c, axis[0] * k, axis[1] * k, axis[2] * k])
    }

    /// Rotation about +z. Exact: x and y components are zero.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            w: c,
            x: 0.0,
            y: 0.0,
            z: s,
        }
    }

    /// Quaternion exponential of a rotation vector (axis · angle).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let theta = norm3(&v);
        let half = 0.5 * theta;
        // sin(θ/2)/θ, with its Taylor expansion near zero
        let k = if theta < 1e-8 {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        let q = [half.cos(), v[0] * k, v[1] * k, v[2] * k];
        Self::normalize(q).expect("exp map is never zero-norm")
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Renormalizes to absorb floating-point drift.
    pub fn renormalized(&self) -> Self {
        Self::normalize(self.to_array()).expect("unit quaternion drifted to zero")
    }

    /// Sign-invariant orientation equality (`q ≡ -q`).
    pub fn orientation_eq(&self, other: &Self) -> bool {
        let a = self.to_array();
        let b = other.to_array();
        let minus: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum();
        let plus: f64 = a.iter().zip(&b).map(|(p, q)| (p + q).powi(2)).sum();
        minus.min(plus).sqrt() < 1e-9
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }

    /// Unit rotation axis, or `None` for the identity.
    pub fn axis(&self) -> Option<Vec3> {
        let v = [self.x, self.y, self.z];
        let n = norm3(&v);
        (n > 1e-15).then(|| scale3(&v, 1.0 / n))
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v + 2w(u×v) + 2u×(u×v)
        let u = [self.x, self.y, self.z];
        let t = scale3(&cross3(&u, v), 2.0);
        add3(&add3(v, &scale3(&t, self.w)), &cross3(&u, &t))
    }

    pub fn to_matrix(&self) -> RotMat {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        RotMat([
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ])
    }

    /// Shepperd's method; picks the numerically largest pivot.
    pub fn from_matrix(r: &RotMat) -> Self {
        let m = &r.0;
        let trace = m[0] + m[4] + m[8];
        let q = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            [
                0.25 * s,
                (m[7] - m[5]) / s,
                (m[2] - m[6]) / s,
                (m[3] - m[1]) / s,
            ]
        } else if m[0] > m[4] && m[0] > m[8] {
            let s = 2.0 * (1.0 + m[0] - m[4] - m[8]).sqrt();
            [
                (m[7] - m[5]) / s,
                0.25 * s,
                (m[1] + m[3]) / s,
                (m[2] + m[6]) / s,
            ]
        } else if m[4] > m[8] {
            let s = 2.0 * (1.0 + m[4] - m[0] - m[8]).sqrt();
            [
                (m[2] - m[6]) / s,
                (m[1] + m[3]) / s,
                0.25 * s,
                (m[5] + m[7]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 + m[8] - m[0] - m[4]).sqrt();
            [
                (m[3] - m[1]) / s,
                (m[2] + m[6]) / s,
                (m[5] + m[7]) / s,
                0.25 * s,
            ]
        };
        Self::normalize(q).expect("rotation matrix yields nonzero quaternion")
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    /// Hamilton product; the result is renormalized.
    fn mul(self, b: UnitQuaternion) -> UnitQuaternion {
        let a = self;
        let raw = [
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        ];
        UnitQuaternion::normalize(raw).expect("product of unit quaternions is unit")
    }
}

/// Row-major 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotMat(pub(crate) [f64; 9]);

impl RotMat {
    pub const IDENTITY: RotMat = RotMat([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    /// Validates orthogonality (`‖RᵀR − I‖_max ≤ 1e-4`) and `det = +1`.
    pub fn from_rows(m: [f64; 9]) -> Result<Self, RotError> {
        let r = RotMat(m);
        let residual = r.orthogonality_residual();
        let det = r.det();
        if !(residual <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL) {
            return Err(RotError::NotARotation { residual, det });
        }
        Ok(r)
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat([c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn as_array(&self) -> &[f64; 9] {
        &self.0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row * 3 + col]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        RotMat([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    #[inline]
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// Max-abs entry of `RᵀR − I`.
    pub fn orthogonality_residual(&self) -> f64 {
        let rtr = matmul3(&self.transpose().0, &self.0);
        let mut worst = 0.0f64;
        for (i, v) in rtr.iter().enumerate() {
            let target = if i % 4 == 0 { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst
    }

    pub fn frobenius_distance(&self, other: &RotMat) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_quat(&self) -> UnitQuaternion {
        UnitQuaternion::from_matrix(self)
    }

    /// Relative rotation mapping `current` onto `goal`: `R_goal · R_currentᵀ`.
    pub fn relative(current: &RotMat, goal: &RotMat) -> RotMat {
        *goal * current.transpose()
    }
}

impl Mul for RotMat {
    type Output = RotMat;
    fn mul(self, rhs: RotMat) -> RotMat {
        RotMat(matmul3(&self.0, &rhs.0))
    }
}

fn matmul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

/// Angle of the relative rotation between two orientations, in `[0, π]`.
///
/// Equal to `2·acos(|q1·q2|)`, evaluated as `4·atan2(‖q1 − s·q2‖, ‖q1 + s·q2‖)`
/// with `s = sign(q1·q2)` so that small angles keep full precision.
pub fn geodesic_angle(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let s = if q1.dot(q2) < 0.0 { -1.0 } else { 1.0 };
    let a = q1.to_array();
    let b = q2.to_array();
    let mut minus = 0.0;
    let mut plus = 0.0;
    for i in 0..4 {
        minus += (a[i] - s * b[i]).powi(2);
        plus += (a[i] + s * b[i]).powi(2);
    }
    (4.0 * minus.sqrt().atan2(plus.sqrt())).min(PI)
}

/// `2·asin(‖R̂ − R‖_F / 2√2)` and its gradient with respect to `R̂`.
///
/// For valid rotations the value equals the geodesic angle between them.
/// The arcsin derivative is evaluated with the argument clamped to
/// `1 − 1e-7`, so the gradient stays finite at θ = π.
pub fn rotation_loss(predicted: &[f64; 9], target: &RotMat) -> (f64, [f64; 9]) {
    let mut diff = [0.0; 9];
    for i in 0..9 {
        diff[i] = predicted[i] - target.0[i];
    }
    let fro = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let arg = fro / (2.0 * std::f64::consts::SQRT_2);
    let loss = 2.0 * arg.clamp(0.0, 1.0).asin();

    let mut grad = [0.0; 9];
    if fro > 0.0 {
        let a = arg.min(ASIN_GRAD_CLAMP);
        // d/dR̂ 2·asin(‖D‖/2√2) = 2/√(1−a²) · 1/(2√2) · D/‖D‖
        let k = 2.0 / (1.0 - a * a).sqrt() / (2.0 * std::f64::consts::SQRT_2) / fro;
        for i in 0..9 {
            grad[i] = k * diff[i];
        }
    }
    (loss, grad)
}

/// Rotation about +z with angle uniform on `[0, 2π)`.
pub fn random_rotation_z<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    let angle = rng.random::<f64>() * 2.0 * PI;
    UnitQuaternion::about_z(angle)
}

/// Haar-uniform rotation from a normalized 4-vector of standard normals.
pub fn random_rotation_so3<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let raw: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if let Ok(q) = UnitQuaternion::normalize(raw) {
            return q;
        }
    }
}

/// Gram–Schmidt map from two stacked 3-vectors to a rotation whose first
/// two columns are the orthonormalized inputs.
pub fn project_to_so3(m: &[f64; 6]) -> Result<RotMat, RotError> {
    let a1 = [m[0], m[1], m[2]];
    let a2 = [m[3], m[4], m[5]];
    let n1 = norm3(&a1);
    if !(n1 > PROJECT_EPS) {
        return Err(RotError::Degenerate("first vector has zero norm"));
    }
    let b1 = scale3(&a1, 1.0 / n1);
    let u2 = sub3(&a2, &scale3(&b1, dot3(&b1, &a2)));
    let n2 = norm3(&u2);
    if !(n2 > PROJECT_EPS) {
        return Err(RotError::Degenerate("second vector is parallel to the first"));
    }
    let b2 = scale3(&u2, 1.0 / n2);
    let b3 = cross3(&b1, &b2);
    Ok(RotMat([
        b1[0], b2[0], b3[0], //
        b1[1], b2[1], b3[1], //
        b1[2], b2[2], b3[2],
    ]))
}

/// Pulls a gradient with respect to the projected matrix back onto the
/// raw 6-vector fed to [`project_to_so3`].
pub fn project_to_so3_backward(m: &[f64; 6], grad_r: &[f64; 9]) -> Result<[f64; 6], RotError> {
    let a1 = [m[0], m[1], m[2]];
    let a2 = [m[3], m[4], m[5]];
    let n1 = norm3(&a1);
    if !(n1 > PROJECT_EPS) {
        return Err(RotError::Degenerate("first vector has zero norm"));
    }
    let b1 = scale3(&a1, 1.0 / n1);
    let d = dot3(&b1, &a2);
    let u2 = sub3(&a2, &scale3(&b1, d));
    let n2 = norm3(&u2);
    if !(n2 > PROJECT_EPS) {
        return Err(RotError::Degenerate("second vector is parallel to the first"));
    }
    let b2 = scale3(&u2, 1.0 / n2);

    let col = |c: usize| [grad_r[c], grad_r[3 + c], grad_r[6 + c]];
    let (mut g1, mut g2, g3) = (col(0), col(1), col(2));

    // b3 = b1 × b2
    g1 = add3(&g1, &cross3(&b2, &g3));
    g2 = add3(&g2, &cross3(&g3, &b1));

    // b2 = u2 / |u2|
    let gu2 = scale3(&sub3(&g2, &scale3(&b2, dot3(&b2, &g2))), 1.0 / n2);

    // u2 = a2 − (b1·a2) b1
    let ga2 = sub3(&gu2, &scale3(&b1, dot3(&b1, &gu2)));
    let gb1_from_u2 = add3(&scale3(&gu2, -d), &scale3(&a2, -dot3(&b1, &gu2)));
    g1 = add3(&g1, &gb1_from_u2);

    // b1 = a1 / |a1|
    let ga1 = scale3(&sub3(&g1, &scale3(&b1, dot3(&b1, &g1))), 1.0 / n1);

    Ok([ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]])
}

/// Inverse of [`project_to_so3`] on valid rotations: its first two columns.
pub fn rotation_to_6d(r: &RotMat) -> [f64; 6] {
    let m = &r.0;
    [m[0], m[3], m[6], m[1], m[4], m[7]]
}
