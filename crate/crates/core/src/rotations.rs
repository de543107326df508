//! Rotation representations: continuous 6D, rotation matrices, axis-angle and
//! unit quaternions, plus spherical interpolation.
//!
//! Matrices are stored row-major. The 6D form is the first two columns of a
//! rotation matrix, `(a₁, a₂)`, orthonormalized by Gram–Schmidt on the way back.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::jet::Jet;
use crate::numerics::{CustomOp, Graph, Tensor, Var};

/// Smallest admissible norm for either Gram–Schmidt vector.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Below this squared angle the axis-angle map switches to its Taylor series.
const SMALL_ANGLE_SQ: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle(pub [f64; 3]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Arithmetic shared by plain `f64` and forward-mode jets.
pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn lit(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

impl<const N: usize> Real for Jet<N> {
    fn lit(v: f64) -> Self {
        Jet::constant(v)
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(self)
    }
    fn sin(self) -> Self {
        Jet::sin(self)
    }
    fn cos(self) -> Self {
        Jet::cos(self)
    }
}

fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gram–Schmidt on `(a₁, a₂)`; returns the row-major matrix `[b₁ b₂ b₃]` (columns).
pub(crate) fn gram_schmidt<T: Real>(r: [T; 6]) -> Result<[T; 9]> {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = dot3(a1, a1).sqrt();
    if !(n1.val() >= DEGENERATE_EPS) {
        return Err(Error::Degenerate(format!(
            "6D rotation: |a1| = {:e}",
            n1.val()
        )));
    }
    let b1 = a1.map(|x| x / n1);
    let p = dot3(b1, a2);
    let u = [a2[0] - p * b1[0], a2[1] - p * b1[1], a2[2] - p * b1[2]];
    let n2 = dot3(u, u).sqrt();
    if !(n2.val() >= DEGENERATE_EPS) {
        return Err(Error::Degenerate(format!(
            "6D rotation: a2 parallel to a1 (residual {:e})",
            n2.val()
        )));
    }
    let b2 = u.map(|x| x / n2);
    let b3 = cross3(b1, b2);
    Ok([
        b1[0], b2[0], b3[0], b1[1], b2[1], b3[1], b1[2], b2[2], b3[2],
    ])
}

/// Rodrigues' formula `R = I + A·K + B·K²` with `A = sin θ/θ`, `B = (1 − cos θ)/θ²`.
pub(crate) fn rodrigues<T: Real>(aa: [T; 3]) -> [T; 9] {
    let th2 = dot3(aa, aa);
    let (a, b) = if th2.val() < SMALL_ANGLE_SQ {
        let th4 = th2 * th2;
        (
            T::lit(1.0) - th2 * T::lit(1.0 / 6.0) + th4 * T::lit(1.0 / 120.0),
            T::lit(0.5) - th2 * T::lit(1.0 / 24.0) + th4 * T::lit(1.0 / 720.0),
        )
    } else {
        let th = th2.sqrt();
        (th.sin() / th, (T::lit(1.0) - th.cos()) / th2)
    };
    let [x, y, z] = aa;
    let zero = T::lit(0.0);
    let k = [zero, -z, y, z, zero, -x, -y, x, zero];
    let mut r = [zero; 9];
    for i in 0..3 {
        for j in 0..3 {
            let mut kk = zero;
            for m in 0..3 {
                kk = kk + k[i * 3 + m] * k[m * 3 + j];
            }
            let id = if i == j { T::lit(1.0) } else { zero };
            r[i * 3 + j] = id + a * k[i * 3 + j] + b * kk;
        }
    }
    r
}

impl RotationMatrix {
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Validates `RᵀR = I` and `det R = 1` to `tol`.
    pub fn checked(m: [[f64; 3]; 3], tol: f64) -> Result<Self> {
        let r = Self(m);
        let (orth, det) = r.orthonormality_error();
        if orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::OutOfRange(format!(
                "not a rotation: |RᵀR − I| = {orth:e}, det = {det}"
            )));
        }
        Ok(r)
    }

    pub fn from_flat(f: &[f64]) -> Self {
        Self([[f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]])
    }

    pub fn flat(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    /// Max entry of `|RᵀR − I|`, and the determinant.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let m = &self.0;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                err = err.max((s - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        (err, det)
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Self(r)
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    /// First two columns.
    pub fn to_rot6d(&self) -> Rot6D {
        let m = &self.0;
        Rot6D([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.flat()
            .iter()
            .zip(o.flat())
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotationMatrix> {
    Ok(RotationMatrix::from_flat(&gram_schmidt(r.0)?))
}

pub fn axis_angle_to_matrix(aa: &AxisAngle) -> RotationMatrix {
    RotationMatrix::from_flat(&rodrigues(aa.0))
}

/// Shepperd's method: branch on the largest of the trace and the diagonal.
pub fn matrix_to_quaternion(r: &RotationMatrix) -> Quaternion {
    let m = &r.0;
    let tr = m[0][0] + m[1][1] + m[2][2];
    let q = if tr >= m[0][0] && tr >= m[1][1] && tr >= m[2][2] {
        let s = (1.0 + tr).sqrt() * 2.0;
        Quaternion {
            w: 0.25 * s,
            x: (m[2][1] - m[1][2]) / s,
            y: (m[0][2] - m[2][0]) / s,
            z: (m[1][0] - m[0][1]) / s,
        }
    } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        Quaternion {
            w: (m[2][1] - m[1][2]) / s,
            x: 0.25 * s,
            y: (m[0][1] + m[1][0]) / s,
            z: (m[0][2] + m[2][0]) / s,
        }
    } else if m[1][1] >= m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        Quaternion {
            w: (m[0][2] - m[2][0]) / s,
            x: (m[0][1] + m[1][0]) / s,
            y: 0.25 * s,
            z: (m[1][2] + m[2][1]) / s,
        }
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        Quaternion {
            w: (m[1][0] - m[0][1]) / s,
            x: (m[0][2] + m[2][0]) / s,
            y: (m[1][2] + m[2][1]) / s,
            z: 0.25 * s,
        }
    };
    q.normalized().canonical()
}

pub fn quaternion_to_matrix(q: &Quaternion) -> RotationMatrix {
    let Quaternion { w, x, y, z } = q.normalized();
    RotationMatrix([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Inverse exponential map, angle in `[0, π]`.
pub fn matrix_to_axis_angle(r: &RotationMatrix) -> AxisAngle {
    quaternion_to_axis_angle(&matrix_to_quaternion(r))
}

pub fn axis_angle_to_quaternion(aa: &AxisAngle) -> Quaternion {
    let [x, y, z] = aa.0;
    let th2 = x * x + y * y + z * z;
    let th = th2.sqrt();
    // sin(θ/2)/θ
    let s = if th2 < SMALL_ANGLE_SQ {
        0.5 - th2 / 48.0
    } else {
        (0.5 * th).sin() / th
    };
    Quaternion {
        w: (0.5 * th).cos(),
        x: x * s,
        y: y * s,
        z: z * s,
    }
    .canonical()
}

pub fn quaternion_to_axis_angle(q: &Quaternion) -> AxisAngle {
    let q = q.normalized().canonical();
    let n = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    let scale = if n < 1e-12 {
        2.0 / q.w
    } else {
        2.0 * n.atan2(q.w) / n
    };
    AxisAngle([q.x * scale, q.y * scale, q.z * scale])
}

impl AxisAngle {
    pub fn angle(&self) -> f64 {
        let [x, y, z] = self.0;
        (x * x + y * y + z * z).sqrt()
    }

    /// Equivalent axis-angle with angle in `[0, π]`.
    pub fn canonical(&self) -> Self {
        quaternion_to_axis_angle(&axis_angle_to_quaternion(self))
    }
}

impl Quaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Representative of `±q` with `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation angle between the orientations `self` and `o`, in `[0, π]`.
    pub fn angle_to(&self, o: &Self) -> f64 {
        let o = if self.dot(o) < 0.0 { o.neg() } else { *o };
        let d = [self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z];
        let s = [self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z];
        let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Angle between the unit 4-vectors is 2·atan2(|d|, |s|); the rotation angle doubles it.
        4.0 * nd.atan2(ns)
    }
}

/// Spherical interpolation along the shortest arc, `u ∈ [0, 1]`.
pub fn slerp(q0: &Quaternion, q1: &Quaternion, u: f64) -> Result<Quaternion> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::OutOfRange(format!(
            "slerp parameter {u} outside [0, 1]"
        )));
    }
    let a = q0.normalized();
    let mut b = q1.normalized();
    if a.dot(&b) < 0.0 {
        b = b.neg();
    }
    let d = [b.w - a.w, b.x - a.x, b.y - a.y, b.z - a.z];
    let s = [b.w + a.w, b.x + a.x, b.y + a.y, b.z + a.z];
    let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Angle between the 4-vectors, computed without acos so small arcs stay accurate.
    let omega = 2.0 * nd.atan2(ns);
    let (wa, wb) = if omega < 1e-12 {
        (1.0 - u, u)
    } else {
        let so = omega.sin();
        (((1.0 - u) * omega).sin() / so, (u * omega).sin() / so)
    };
    let q = Quaternion {
        w: wa * a.w + wb * b.w,
        x: wa * a.x + wb * b.x,
        y: wa * a.y + wb * b.y,
        z: wa * a.z + wb * b.z,
    };
    Ok(q.normalized().canonical())
}

/// Row-wise 6D → matrix kernel: `n × 6k` in, `n × 9k` out.
struct Rot6dKernel;

impl CustomOp for Rot6dKernel {
    fn name(&self) -> &str {
        "rot6d_to_matrix"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if !x.cols().is_multiple_of(6) {
            return Err(Error::Shape(format!(
                "rot6d input {}x{} is not a multiple of 6",
                x.rows(),
                x.cols()
            )));
        }
        let blocks = x.cols() / 6;
        let mut out = Tensor::zeros(x.rows(), blocks * 9);
        for i in 0..x.rows() {
            for b in 0..blocks {
                let src: [f64; 6] = x.row_slice(i)[b * 6..b * 6 + 6].try_into().unwrap();
                let m = gram_schmidt(src)?;
                out.row_slice_mut(i)[b * 9..b * 9 + 9].copy_from_slice(&m);
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let mut gx = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for b in 0..x.cols() / 6 {
                let src: [f64; 6] = x.row_slice(i)[b * 6..b * 6 + 6].try_into().unwrap();
                // The forward pass already rejected degenerate rows.
                let m = gram_schmidt(Jet::<6>::seed(src)).expect("validated in forward");
                let g = &grad.row_slice(i)[b * 9..b * 9 + 9];
                let dst = &mut gx.row_slice_mut(i)[b * 6..b * 6 + 6];
                for (k, d) in dst.iter_mut().enumerate() {
                    *d = m.iter().zip(g).map(|(e, gi)| e.d[k] * gi).sum();
                }
            }
        }
        vec![gx]
    }
}

/// Row-wise axis-angle → matrix kernel: `n × 3k` in, `n × 9k` out.
struct AxisAngleKernel;

impl CustomOp for AxisAngleKernel {
    fn name(&self) -> &str {
        "axis_angle_to_matrix"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if !x.cols().is_multiple_of(3) {
            return Err(Error::Shape(format!(
                "axis-angle input {}x{} is not a multiple of 3",
                x.rows(),
                x.cols()
            )));
        }
        let blocks = x.cols() / 3;
        let mut out = Tensor::zeros(x.rows(), blocks * 9);
        for i in 0..x.rows() {
            for b in 0..blocks {
                let src: [f64; 3] = x.row_slice(i)[b * 3..b * 3 + 3].try_into().unwrap();
                out.row_slice_mut(i)[b * 9..b * 9 + 9].copy_from_slice(&rodrigues(src));
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let mut gx = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for b in 0..x.cols() / 3 {
                let src: [f64; 3] = x.row_slice(i)[b * 3..b * 3 + 3].try_into().unwrap();
                let m = rodrigues(Jet::<3>::seed(src));
                let g = &grad.row_slice(i)[b * 9..b * 9 + 9];
                let dst = &mut gx.row_slice_mut(i)[b * 3..b * 3 + 3];
                for (k, d) in dst.iter_mut().enumerate() {
                    *d = m.iter().zip(g).map(|(e, gi)| e.d[k] * gi).sum();
                }
            }
        }
        vec![gx]
    }
}

/// Differentiable 6D → matrix over every 6-column block of `x`.
pub fn rot6d_to_matrix_graph(g: &mut Graph, x: Var) -> Result<Var> {
    g.custom(Arc::new(Rot6dKernel), &[x])
}

/// Differentiable Rodrigues map over every 3-column block of `x`.
pub fn axis_angle_to_matrix_graph(g: &mut Graph, x: Var) -> Result<Var> {
    g.custom(Arc::new(AxisAngleKernel), &[x])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_aa(rng: &mut impl Rng, max_angle: f64) -> AxisAngle {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let th = rng.random_range(0.0..max_angle);
        AxisAngle(v.map(|x| x / n * th))
    }

    #[test]
    fn rot6d_identity_and_scale_invariance() {
        let r = rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r, RotationMatrix::IDENTITY);
        let r = rot6d_to_matrix(&Rot6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_eq!(r, RotationMatrix::IDENTITY);
    }

    #[test]
    fn rot6d_rejects_degenerate() {
        assert!(matches!(
            rot6d_to_matrix(&Rot6D([0.0; 6])),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&Rot6D([1.0, 1.0, 0.0, 2.0, 2.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn random_rot6d_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let r = Rot6D(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
            let m = rot6d_to_matrix(&r).unwrap();
            let (orth, det) = m.orthonormality_error();
            assert!(orth < 1e-9 && (det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_angle_known_values() {
        assert_eq!(
            matrix_to_axis_angle(&RotationMatrix::IDENTITY).0,
            [0.0, 0.0, 0.0]
        );
        let rz = RotationMatrix([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let aa = matrix_to_axis_angle(&rz).0;
        assert!(aa[0].abs() < 1e-15 && aa[1].abs() < 1e-15);
        assert!((aa[2] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn quaternion_known_values() {
        assert_eq!(
            axis_angle_to_quaternion(&AxisAngle([0.0; 3])),
            Quaternion::IDENTITY
        );
        let q = axis_angle_to_quaternion(&AxisAngle([0.0, 0.0, std::f64::consts::PI]));
        assert!(q.w.abs() < 1e-15 && q.x == 0.0 && q.y == 0.0 && (q.z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn round_trips_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            // Include angles right up to π to exercise the diagonal branch.
            let max = if i % 10 == 0 {
                std::f64::consts::PI
            } else {
                3.0
            };
            let aa = random_aa(&mut rng, max);
            let r = axis_angle_to_matrix(&aa);
            let back = axis_angle_to_matrix(&matrix_to_axis_angle(&r));
            worst = worst.max(r.max_abs_diff(&back));
            let aa2 = quaternion_to_axis_angle(&axis_angle_to_quaternion(&aa));
            for k in 0..3 {
                worst = worst.max((aa.0[k] - aa2.0[k]).abs());
            }
        }
        assert!(worst <= 1e-9, "{worst:e}");
    }

    #[test]
    fn near_pi_rotations() {
        for eps in [0.0, 1e-12, 1e-9, 1e-6] {
            let aa = AxisAngle([
                0.0,
                (std::f64::consts::PI - eps) * 0.6,
                (std::f64::consts::PI - eps) * 0.8,
            ]);
            let r = axis_angle_to_matrix(&aa);
            let back = matrix_to_axis_angle(&r);
            assert!(back.angle() <= std::f64::consts::PI + 1e-12);
            assert!(axis_angle_to_matrix(&back).max_abs_diff(&r) < 1e-9);
        }
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let q0 = Quaternion::IDENTITY;
        let q1 = axis_angle_to_quaternion(&AxisAngle([0.0, 0.0, std::f64::consts::FRAC_PI_2]));
        assert_eq!(slerp(&q0, &q1, 0.0).unwrap(), q0);
        let end = slerp(&q0, &q1, 1.0).unwrap();
        assert!(end.angle_to(&q1) < 1e-12);
        let mid = matrix_to_axis_angle(&quaternion_to_matrix(&slerp(&q0, &q1, 0.5).unwrap()));
        assert!((mid.0[2] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(mid.0[0].abs() < 1e-15 && mid.0[1].abs() < 1e-15);
        assert!(slerp(&q0, &q1, 1.5).is_err());
        assert!(slerp(&q0, &q1, -0.1).is_err());
        let same = slerp(&q1, &q1, 0.3).unwrap();
        assert!(same.angle_to(&q1) < 1e-12);
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let q0 = axis_angle_to_quaternion(&AxisAngle([0.0, 0.0, 0.1]));
        let q1 = axis_angle_to_quaternion(&AxisAngle([0.0, 0.0, -0.1])).neg();
        let mid = slerp(&q0, &q1, 0.5).unwrap();
        assert!(mid.angle_to(&Quaternion::IDENTITY) < 1e-12);
    }

    #[test]
    fn graph_kernels_match_direct_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x6 = Tensor::from_fn(3, 12, |_, _| rng.random_range(-2.0..2.0));
        let w9 = Tensor::from_fn(3, 18, |_, _| rng.random_range(-1.0..1.0));
        let rep = check_gradients(std::slice::from_ref(&x6), 1e-5, None, |g, v| {
            let m = rot6d_to_matrix_graph(g, v[0])?;
            let w = g.constant(w9.clone());
            let p = g.mul(m, w)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");

        let x3 = Tensor::from_fn(3, 6, |i, _| {
            if i == 0 {
                rng.random_range(-1e-4..1e-4)
            } else {
                rng.random_range(-2.0..2.0)
            }
        });
        let rep = check_gradients(std::slice::from_ref(&x3), 1e-5, None, |g, v| {
            let m = axis_angle_to_matrix_graph(g, v[0])?;
            let w = g.constant(w9.clone());
            let p = g.mul(m, w)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");

        let mut g = Graph::new();
        let v = g.constant(x6.clone());
        let m = rot6d_to_matrix_graph(&mut g, v).unwrap();
        let direct = rot6d_to_matrix(&Rot6D(x6.row_slice(1)[6..12].try_into().unwrap())).unwrap();
        assert_eq!(&g.value(m).row_slice(1)[9..18], &direct.flat());
    }
}
