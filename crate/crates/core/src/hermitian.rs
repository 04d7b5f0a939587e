//! Closed-form spectral calculus for 2×2 Hermitian matrices.
//!
//! Every matrix function here goes through [`eigh2`]: with eigenpairs
//! `(λ1, u1)`, `(λ2, u2)` and `u1 u1† + u2 u2† = I`, a spectral function is
//!
//! ```text
//! f(M) = f(λ2)·I + (f(λ1) − f(λ2))·u1 u1†
//! ```
//!
//! which keeps the diagonal exactly real and needs no second eigenvector.

use num_complex::Complex64;
use std::ops::{Add, Mul, Sub};

/// Relative spectral gap below which divided differences fall back to `f'`
/// at the midpoint.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Largest eigenvalue accepted by [`matrix_exp`].
pub const EXP_LIMIT: f64 = 700.0;

/// Default relative eigenvalue floor for [`matrix_log`].
pub const DEFAULT_LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HermitianError {
    #[error("covariance sample has non-positive trace {0}")]
    NonPositiveTrace(f64),
    #[error("eigenvalue {0} exceeds the exponential limit")]
    ExpOverflow(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("non-finite matrix entry")]
    NonFinite,
}

/// One 2×2 Hermitian matrix `[[c11, c12], [conj(c12), c22]]`.
///
/// Only the upper triangle is stored, so the matrix is Hermitian by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HermitianMatrix2 {
    pub c11: f64,
    pub c22: f64,
    pub c12: Complex64,
}

impl HermitianMatrix2 {
    pub const ZERO: Self = Self {
        c11: 0.0,
        c22: 0.0,
        c12: Complex64::new(0.0, 0.0),
    };
    pub const IDENTITY: Self = Self {
        c11: 1.0,
        c22: 1.0,
        c12: Complex64::new(0.0, 0.0),
    };

    pub fn new(c11: f64, c22: f64, c12: Complex64) -> Self {
        Self { c11, c22, c12 }
    }

    pub fn diag(c11: f64, c22: f64) -> Self {
        Self::new(c11, c22, Complex64::new(0.0, 0.0))
    }

    /// Outer product `k k†` of a 2-vector.
    pub fn outer(k: [Complex64; 2]) -> Self {
        Self {
            c11: k[0].norm_sqr(),
            c22: k[1].norm_sqr(),
            c12: k[0] * k[1].conj(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.c11 + self.c22
    }

    pub fn det(&self) -> f64 {
        self.c11 * self.c22 - self.c12.norm_sqr()
    }

    pub fn c21(&self) -> Complex64 {
        self.c12.conj()
    }

    /// Entry `(i, j)` of the full matrix.
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        match (i, j) {
            (0, 0) => Complex64::new(self.c11, 0.0),
            (0, 1) => self.c12,
            (1, 0) => self.c12.conj(),
            (1, 1) => Complex64::new(self.c22, 0.0),
            _ => panic!("index ({i}, {j}) out of range for a 2x2 matrix"),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.c11 * s, self.c22 * s, self.c12 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.c11.is_finite() && self.c22.is_finite() && self.c12.re.is_finite() && self.c12.im.is_finite()
    }

    /// PSD check with the tolerance `det ≥ −tol·tr²`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let tr = self.trace();
        self.c11 >= 0.0 && self.c22 >= 0.0 && self.det() >= -tol * tr * tr
    }

    /// Largest absolute difference over the four real coordinates.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.c11 - other.c11)
            .abs()
            .max((self.c22 - other.c22).abs())
            .max((self.c12.re - other.c12.re).abs())
            .max((self.c12.im - other.c12.im).abs())
    }

    /// Frobenius norm of the full matrix.
    pub fn frobenius(&self) -> f64 {
        (self.c11 * self.c11 + self.c22 * self.c22 + 2.0 * self.c12.norm_sqr()).sqrt()
    }
}

impl Add for HermitianMatrix2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.c11 + rhs.c11, self.c22 + rhs.c22, self.c12 + rhs.c12)
    }
}

impl Sub for HermitianMatrix2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.c11 - rhs.c11, self.c22 - rhs.c22, self.c12 - rhs.c12)
    }
}

impl Mul<f64> for HermitianMatrix2 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

/// Eigendecomposition of a [`HermitianMatrix2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDecomp2 {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Unit eigenvector of `lambda1`; first nonzero component is real and ≥ 0.
    pub u1: [Complex64; 2],
}

impl SpectralDecomp2 {
    /// Unit eigenvector of `lambda2`, orthogonal to `u1`.
    pub fn u2(&self) -> [Complex64; 2] {
        [-self.u1[1].conj(), self.u1[0].conj()]
    }

    /// `f(λ2)·I + (f(λ1) − f(λ2))·u1 u1†`.
    pub fn apply(&self, f1: f64, f2: f64) -> HermitianMatrix2 {
        let d = f1 - f2;
        let [a, b] = self.u1;
        HermitianMatrix2 {
            c11: f2 + d * a.norm_sqr(),
            c22: f2 + d * b.norm_sqr(),
            c12: a * b.conj() * d,
        }
    }

    pub fn reconstruct(&self) -> HermitianMatrix2 {
        self.apply(self.lambda1, self.lambda2)
    }

    /// Spectral scale used for degeneracy tests: `|λ1| + |λ2|`.
    fn scale(&self) -> f64 {
        self.lambda1.abs() + self.lambda2.abs()
    }
}

/// Closed-form spectral decomposition.
///
/// Degenerate spectra (`λ1 = λ2`) return `u1 = (1, 0)`.
pub fn eigh2(m: &HermitianMatrix2) -> SpectralDecomp2 {
    let half_tr = 0.5 * (m.c11 + m.c22);
    let half_diff = 0.5 * (m.c11 - m.c22);
    let off = m.c12.norm();
    let disc = half_diff.hypot(off);
    let lambda1 = half_tr + disc;
    let lambda2 = half_tr - disc;

    if disc == 0.0 {
        return SpectralDecomp2 {
            lambda1,
            lambda2,
            u1: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        };
    }

    // Pick the null-vector candidate of (M − λ1 I) with the larger norm.
    let u1 = if half_diff >= 0.0 {
        // row 2: (λ1 − c22, conj(c12)); first component ≥ disc > 0
        let x = disc + half_diff;
        let y = m.c12.conj();
        let n = x.hypot(y.norm());
        [Complex64::new(x / n, 0.0), y / n]
    } else {
        // row 1: (c12, λ1 − c11), rotated so the first component is real
        let y = disc - half_diff;
        if off == 0.0 {
            [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
        } else {
            let phase = m.c12.conj() / off;
            let n = off.hypot(y);
            [Complex64::new(off / n, 0.0), phase * (y / n)]
        }
    };

    SpectralDecomp2 { lambda1, lambda2, u1 }
}

/// Matrix logarithm with a relative eigenvalue floor:
/// `U·diag(log(max(λᵢ, floor·tr)))·U†`.
pub fn matrix_log(m: &HermitianMatrix2, floor: f64) -> Result<HermitianMatrix2, HermitianError> {
    if !m.is_finite() {
        return Err(HermitianError::NonFinite);
    }
    let tr = m.trace();
    if tr <= 0.0 {
        return Err(HermitianError::NonPositiveTrace(tr));
    }
    let s = eigh2(m);
    let lo = floor * tr;
    Ok(s.apply(s.lambda1.max(lo).ln(), s.lambda2.max(lo).ln()))
}

pub fn matrix_exp(m: &HermitianMatrix2) -> Result<HermitianMatrix2, HermitianError> {
    if !m.is_finite() {
        return Err(HermitianError::NonFinite);
    }
    let s = eigh2(m);
    if s.lambda1 > EXP_LIMIT {
        return Err(HermitianError::ExpOverflow(s.lambda1));
    }
    Ok(s.apply(s.lambda1.exp(), s.lambda2.exp()))
}

/// `M^{-1/2}` of a positive definite matrix.
pub fn matrix_inv_sqrt(m: &HermitianMatrix2) -> Result<HermitianMatrix2, HermitianError> {
    let s = eigh2(m);
    if !(s.lambda2 > 0.0) {
        return Err(HermitianError::NotPositiveDefinite(s.lambda2));
    }
    Ok(s.apply(s.lambda1.sqrt().recip(), s.lambda2.sqrt().recip()))
}

/// Spectral functions with a known derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixFunction {
    /// Logarithm with the relative floor of [`matrix_log`]; floored
    /// eigenvalues are differentiated at the floor value.
    Log { floor: f64 },
    Exp,
    InvSqrt,
}

impl MatrixFunction {
    fn deriv(&self, x: f64) -> f64 {
        match self {
            Self::Log { .. } => x.recip(),
            Self::Exp => x.exp(),
            Self::InvSqrt => -0.5 * x.powf(-1.5),
        }
    }

    /// `(f(a) − f(b)) / (a − b)` evaluated without catastrophic cancellation.
    fn divided_difference(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        match self {
            Self::Log { .. } => (d / b).ln_1p() / d,
            Self::Exp => b.exp() * d.exp_m1() / d,
            Self::InvSqrt => {
                let (sa, sb) = (a.sqrt(), b.sqrt());
                -1.0 / (sa * sb * (sa + sb))
            }
        }
    }
}

/// Adjoint of the Fréchet derivative of `f` at `m`, applied to `upstream`.
///
/// Matrices are paired through the real Frobenius inner product
/// `⟨X, Y⟩ = Re tr(X† Y)` over the full 2×2 matrices, so an off-diagonal
/// upstream entry `G12` stands for both `G12` and `G21 = conj(G12)`.
/// In the eigenbasis the result is `Ĝ ∘ F` with `F_ii = f'(λi)` and
/// `F_12` the divided difference of `f`.
pub fn matrix_func_vjp(
    m: &HermitianMatrix2,
    upstream: &HermitianMatrix2,
    f: MatrixFunction,
) -> Result<HermitianMatrix2, HermitianError> {
    if !m.is_finite() || !upstream.is_finite() {
        return Err(HermitianError::NonFinite);
    }
    let s = eigh2(m);
    let (l1, l2) = match f {
        MatrixFunction::Log { floor } => {
            let tr = m.trace();
            if tr <= 0.0 {
                return Err(HermitianError::NonPositiveTrace(tr));
            }
            let lo = floor * tr;
            (s.lambda1.max(lo), s.lambda2.max(lo))
        }
        MatrixFunction::Exp => {
            if s.lambda1 > EXP_LIMIT {
                return Err(HermitianError::ExpOverflow(s.lambda1));
            }
            (s.lambda1, s.lambda2)
        }
        MatrixFunction::InvSqrt => {
            if !(s.lambda2 > 0.0) {
                return Err(HermitianError::NotPositiveDefinite(s.lambda2));
            }
            (s.lambda1, s.lambda2)
        }
    };

    let f11 = f.deriv(l1);
    let f22 = f.deriv(l2);
    let f12 = if (l1 - l2).abs() < DEGENERATE_GAP * s.scale() || l1 == l2 {
        f.deriv(0.5 * (l1 + l2))
    } else {
        f.divided_difference(l1, l2)
    };

    // Ĝ = U† G U with U = [u1 u2]
    let u = [s.u1, s.u2()];
    let g = to_full(upstream);
    let mut gh = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (a, ua) in u.iter().enumerate() {
        for (b, ub) in u.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    acc += ua[i].conj() * g[i][j] * ub[j];
                }
            }
            gh[a][b] = acc;
        }
    }
    let fm = [[f11, f12], [f12, f22]];
    for a in 0..2 {
        for b in 0..2 {
            gh[a][b] *= fm[a][b];
        }
    }
    // X = U X̂ U†
    let mut x = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..2 {
                for b in 0..2 {
                    acc += u[a][i] * gh[a][b] * u[b][j].conj();
                }
            }
            x[i][j] = acc;
        }
    }
    Ok(HermitianMatrix2 {
        c11: x[0][0].re,
        c22: x[1][1].re,
        c12: 0.5 * (x[0][1] + x[1][0].conj()),
    })
}

fn to_full(m: &HermitianMatrix2) -> [[Complex64; 2]; 2] {
    [[m.entry(0, 0), m.entry(0, 1)], [m.entry(1, 0), m.entry(1, 1)]]
}
