//! Cholesky-based dense linear algebra with a jitter escalation policy.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// First jitter tried when a plain factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Jitter is relative to the mean diagonal, so for a correlation matrix it is
/// an absolute amount added to the unit diagonal.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl SpdFactor {
    /// Factors `m`, adding `jitter * mean(diag) * I` with jitter 0, 1e-10,
    /// 1e-9, ..., 1e-6 until the factorization succeeds.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let n = m.nrows();
        let scale = if n == 0 {
            1.0
        } else {
            m.diagonal().mean().abs().max(f64::MIN_POSITIVE)
        };
        if let Some(l) = try_cholesky(m, 0.0) {
            return Ok(SpdFactor { l, jitter: 0.0 });
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            if let Some(l) = try_cholesky(m, jitter * scale) {
                return Ok(SpdFactor {
                    l,
                    jitter: jitter * scale,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::NotPositiveDefinite { max_jitter: JITTER_MAX })
    }

    /// Factors `m` with a fixed diagonal shift and no escalation.
    pub fn with_jitter(m: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        try_cholesky(m, jitter)
            .map(|l| SpdFactor { l, jitter })
            .ok_or(Error::NotPositiveDefinite { max_jitter: jitter })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Absolute amount added to the diagonal before factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// The factored matrix `L Lᵀ` (including any jitter).
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut DVector<f64>) {
        self.l.solve_lower_triangular_unchecked_mut(x);
        self.l.tr_solve_lower_triangular_unchecked_mut(x);
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut x);
        self.l.tr_solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `L⁻¹ b`, the whitened vector.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `L⁻¹ B` column by column.
    pub fn whiten_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    /// `L w`, mapping white noise to a draw with the factored covariance.
    pub fn color(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.l * w
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit inverse; only for small matrices and test oracles.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }
}

fn try_cholesky(m: &DMatrix<f64>, shift: f64) -> Option<DMatrix<f64>> {
    let mut a = m.clone();
    if shift != 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
    }
    let chol = nalgebra::Cholesky::new(a)?;
    let l = chol.l();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

/// The two-column regression design `[1 X]`.
pub fn intercept_design(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] })
}

/// Symmetric 2×2 inverse; `None` when the determinant vanishes relative to the entries.
pub fn inverse_2x2(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let scale = (a[(0, 0)] * a[(1, 1)])
        .abs()
        .max(a[(0, 1)] * a[(1, 0)])
        .max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-12 * scale {
        return None;
    }
    Some(DMatrix::from_row_slice(
        2,
        2,
        &[a[(1, 1)] / det, -a[(0, 1)] / det, -a[(1, 0)] / det, a[(0, 0)] / det],
    ))
}
