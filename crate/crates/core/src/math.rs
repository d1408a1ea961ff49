//! Small dense linear algebra and log-space helpers.
//!
//! The state space is two-dimensional throughout, so vectors and matrices are
//! fixed-size structs rather than a general matrix library.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// 2x2 matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<R> {
    pub m: [[R; 2]; 2],
}

impl<R: Real> Mat2<R> {
    #[inline]
    pub fn new(a: R, b: R, c: R, d: R) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    #[inline]
    pub fn zero() -> Self {
        let z = R::zero();
        Mat2::new(z, z, z, z)
    }

    #[inline]
    pub fn identity() -> Self {
        let (o, z) = (R::one(), R::zero());
        Mat2::new(o, z, z, o)
    }

    #[inline]
    pub fn diag(a: R, d: R) -> Self {
        let z = R::zero();
        Mat2::new(a, z, z, d)
    }

    #[inline]
    pub fn transpose(self) -> Self {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    #[inline]
    pub fn add(self, other: Self) -> Self {
        Mat2::new(
            self.m[0][0] + other.m[0][0],
            self.m[0][1] + other.m[0][1],
            self.m[1][0] + other.m[1][0],
            self.m[1][1] + other.m[1][1],
        )
    }

    #[inline]
    pub fn sub(self, other: Self) -> Self {
        Mat2::new(
            self.m[0][0] - other.m[0][0],
            self.m[0][1] - other.m[0][1],
            self.m[1][0] - other.m[1][0],
            self.m[1][1] - other.m[1][1],
        )
    }

    #[inline]
    pub fn mul(self, other: Self) -> Self {
        let a = &self.m;
        let b = &other.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    #[inline]
    pub fn scale(self, s: R) -> Self {
        Mat2::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }

    #[inline]
    pub fn mul_vec(self, v: Vec2<R>) -> Vec2<R> {
        Vec2::new(
            self.m[0][0] * v.a + self.m[0][1] * v.b,
            self.m[1][0] * v.a + self.m[1][1] * v.b,
        )
    }

    #[inline]
    pub fn trace(self) -> R {
        self.m[0][0] + self.m[1][1]
    }

    #[inline]
    pub fn det(self) -> R {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Force exact symmetry by averaging the off-diagonal entries.
    #[inline]
    pub fn symmetrize(self) -> Self {
        let half = R::cast(0.5);
        let off = (self.m[0][1] + self.m[1][0]) * half;
        Mat2::new(self.m[0][0], off, off, self.m[1][1])
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn sym_eigenvalues(self) -> (R, R) {
        let half = R::cast(0.5);
        let mean = self.trace() * half;
        let d = (self.m[0][0] - self.m[1][1]) * half;
        let r = (d * d + self.m[0][1] * self.m[1][0]).max(R::zero()).sqrt();
        (mean - r, mean + r)
    }

    /// Symmetric positive semidefinite within `tol` on the smallest eigenvalue.
    pub fn is_psd(self, tol: R) -> bool {
        let asym = (self.m[0][1] - self.m[1][0]).abs();
        let scale = R::one().max(self.trace().abs());
        if asym > R::cast(1e-9) * scale {
            return false;
        }
        let (lo, _) = self.symmetrize().sym_eigenvalues();
        lo >= -tol
    }

    /// Lower Cholesky factor of a PSD matrix, clamping tiny negative pivots
    /// to zero so semidefinite inputs (e.g. a zero covariance) factor cleanly.
    pub fn cholesky_psd(self) -> Self {
        let z = R::zero();
        let l11 = self.m[0][0].max(z).sqrt();
        let l21 = if l11 > z { self.m[1][0] / l11 } else { z };
        let l22 = (self.m[1][1] - l21 * l21).max(z).sqrt();
        Mat2::new(l11, z, l21, l22)
    }
}

/// 2-vector over the state space; `a` is the speed component, `b` the rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2<R> {
    pub a: R,
    pub b: R,
}

impl<R: Real> Vec2<R> {
    #[inline]
    pub fn new(a: R, b: R) -> Self {
        Vec2 { a, b }
    }

    #[inline]
    pub fn zero() -> Self {
        Vec2::new(R::zero(), R::zero())
    }

    #[inline]
    pub fn add(self, other: Self) -> Self {
        Vec2::new(self.a + other.a, self.b + other.b)
    }

    #[inline]
    pub fn sub(self, other: Self) -> Self {
        Vec2::new(self.a - other.a, self.b - other.b)
    }

    #[inline]
    pub fn scale(self, s: R) -> Self {
        Vec2::new(self.a * s, self.b * s)
    }

    #[inline]
    pub fn dot(self, other: Self) -> R {
        self.a * other.a + self.b * other.b
    }

    /// Outer product `self * other^T`.
    #[inline]
    pub fn outer(self, other: Self) -> Mat2<R> {
        Mat2::new(
            self.a * other.a,
            self.a * other.b,
            self.b * other.a,
            self.b * other.b,
        )
    }
}

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn logsumexp2<R: Real>(a: R, b: R) -> R {
    if a == R::neg_infinity() && b == R::neg_infinity() {
        return R::neg_infinity();
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log sum exp over a slice; returns -inf on an empty or all -inf input.
pub fn logsumexp<R: Real>(xs: &[R]) -> R {
    let mut max = R::neg_infinity();
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if max == R::neg_infinity() {
        return R::neg_infinity();
    }
    let sum: R = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-place lower Cholesky of a k x k row-major symmetric matrix.
/// Fails when a pivot is not strictly positive.
pub fn cholesky_in_place<R: Real>(a: &mut [R], k: usize) -> Result<()> {
    debug_assert_eq!(a.len(), k * k);
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d = d - a[j * k + p] * a[j * k + p];
        }
        if d <= R::zero() || !d.is_finite() {
            return Err(Error::NonPositiveDefinite);
        }
        let l = d.sqrt();
        a[j * k + j] = l;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s = s - a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / l;
        }
        for i in 0..j {
            a[i * k + j] = R::zero();
        }
    }
    Ok(())
}

/// Solve `L x = b` for lower-triangular `L` (forward substitution), in place.
pub fn forward_solve<R: Real>(l: &[R], k: usize, b: &mut [R]) {
    debug_assert_eq!(l.len(), k * k);
    debug_assert_eq!(b.len(), k);
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s = s - l[i * k + j] * b[j];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solve `L^T x = b` for lower-triangular `L` (back substitution), in place.
pub fn backward_solve_transposed<R: Real>(l: &[R], k: usize, b: &mut [R]) {
    debug_assert_eq!(l.len(), k * k);
    debug_assert_eq!(b.len(), k);
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in (i + 1)..k {
            s = s - l[j * k + i] * b[j];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solve a k x k linear system `A x = b` by Gaussian elimination with partial
/// pivoting. Used for the 3x3 stationary-distribution solve; `A` and `b` are
/// consumed as scratch.
pub fn solve_dense<R: Real>(a: &mut [R], b: &mut [R], k: usize) -> Result<()> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    for col in 0..k {
        let mut pivot = col;
        for row in (col + 1)..k {
            if a[row * k + col].abs() > a[pivot * k + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * k + col] == R::zero() {
            return Err(Error::NonPositiveDefinite);
        }
        if pivot != col {
            for j in 0..k {
                a.swap(col * k + j, pivot * k + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * k + col];
        for row in (col + 1)..k {
            let f = a[row * k + col] / d;
            if f == R::zero() {
                continue;
            }
            for j in col..k {
                let v = a[col * k + j] * f;
                a[row * k + j] = a[row * k + j] - v;
            }
            b[row] = b[row] - b[col] * f;
        }
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in (i + 1)..k {
            s = s - a[i * k + j] * b[j];
        }
        b[i] = s / a[i * k + i];
    }
    Ok(())
}

/// Standard normal CDF, evaluated in double precision.
pub fn normal_cdf<R: Real>(z: R) -> R {
    let z = z.to_f64_lossy();
    R::cast(0.5 * libm::erfc(-z / std::f64::consts::SQRT_2))
}
