//! Low-rank thin-plate spline for the spatial term of the partial-linear
//! model `Y = β₀ + β_x X + g(s) + ε`.
//!
//! The smooth has `k` columns: the two centered coordinates (the unpenalized
//! linear part) and `k − 2` radial columns built from `k + 1` knots. The
//! radial coefficients are constrained to be orthogonal to the linear
//! polynomials at the knots, which makes the bending-energy penalty positive
//! semi-definite on them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::estimators::{FitResult, Method};
use crate::fields::LocationSet;
use crate::optim::golden_section;
use crate::{Error, Result};

/// Smoothing-parameter search range for GCV.
pub const GCV_LAMBDA_RANGE: (f64, f64) = (1e-8, 1e8);
const GCV_GRID_POINTS: usize = 81;
const EDF_TOLERANCE: f64 = 1e-6;

/// Thin-plate radial function `r² ln r`, zero at the origin.
pub fn tps_eta(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

#[derive(Debug, Clone)]
pub struct SplineBasis {
    /// `n × k`, columns centered.
    basis: DMatrix<f64>,
    /// `k × k`; zero on the two linear columns.
    penalty: DMatrix<f64>,
    knots: Vec<[f64; 2]>,
}

impl SplineBasis {
    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis_matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn penalty_matrix(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }
}

/// Greedy max-min subset of `m` locations, starting from the one nearest the
/// centroid.
fn farthest_point_knots(locs: &LocationSet, m: usize) -> Vec<usize> {
    let coords = locs.coords();
    let n = coords.len();
    let cx = coords.iter().map(|c| c[0]).sum::<f64>() / n as f64;
    let cy = coords.iter().map(|c| c[1]).sum::<f64>() / n as f64;
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let first = (0..n)
        .min_by(|&i, &j| dist(coords[i], [cx, cy]).total_cmp(&dist(coords[j], [cx, cy])))
        .unwrap_or(0);
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = coords.iter().map(|&c| dist(c, coords[first])).collect();
    while chosen.len() < m {
        let next = (0..n)
            .max_by(|&i, &j| nearest[i].total_cmp(&nearest[j]).then(j.cmp(&i)))
            .unwrap_or(0);
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(coords[i], coords[next]));
        }
    }
    chosen
}

/// Thin-plate basis of dimension `k` (excluding the intercept).
pub fn build_tps_basis(locs: &LocationSet, k: usize) -> Result<SplineBasis> {
    let n = locs.len();
    if k < 3 {
        return Err(Error::InvalidParameter(format!(
            "spline basis dimension must be at least 3, got {k}"
        )));
    }
    if k + 1 > n {
        return Err(Error::InvalidParameter(format!(
            "spline basis dimension {k} needs {} knots but only {n} locations are available",
            k + 1
        )));
    }
    let m = k + 1;
    let coords = locs.coords();
    let knots: Vec<[f64; 2]> = farthest_point_knots(locs, m).into_iter().map(|i| coords[i]).collect();

    // Null space of Tᵀ, T = [1, κx, κy], through the eigenvectors of the
    // projector onto it.
    let t = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => knots[i][0],
        _ => knots[i][1],
    });
    let gram = t.transpose() * &t;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::SingularDesign("spline knots are collinear".into()))?;
    let projector = DMatrix::identity(m, m) - &t * gram_inv * t.transpose();
    let eig = SymmetricEigen::new(projector);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let z = DMatrix::from_fn(m, m - 3, |i, j| eig.eigenvectors[(i, order[j])]);

    let knot_dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let omega = DMatrix::from_fn(m, m, |i, j| tps_eta(knot_dist(knots[i], knots[j])));
    let radial = DMatrix::from_fn(n, m, |i, j| tps_eta(knot_dist(coords[i], knots[j]))) * &z;

    let mut radial_penalty = z.transpose() * omega * &z;
    radial_penalty = (&radial_penalty + radial_penalty.transpose()) * 0.5;
    let eig = SymmetricEigen::new(radial_penalty);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let radial_penalty = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();

    let mut basis = DMatrix::zeros(n, k);
    for i in 0..n {
        basis[(i, 0)] = coords[i][0];
        basis[(i, 1)] = coords[i][1];
    }
    basis.view_mut((0, 2), (n, k - 2)).copy_from(&radial);
    for mut col in basis.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let mut penalty = DMatrix::zeros(k, k);
    penalty.view_mut((2, 2), (k - 2, k - 2)).copy_from(&radial_penalty);
    Ok(SplineBasis { basis, penalty, knots })
}

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothControl {
    /// Minimize `n·RSS/(n − edf)²` over [`GCV_LAMBDA_RANGE`].
    Gcv,
    /// Choose `λ` so the trace of the hat matrix (intercept and exposure
    /// included) equals the target.
    FixedEdf(f64),
    Lambda(f64),
    /// `λ = 0`: regression spline.
    Unpenalized,
}

/// Penalized least squares on `D = [1, X, B]` diagonalized once so that any
/// `λ` costs `O(p)`.
///
/// With `D = QR` and `R⁻ᵀ S R⁻¹ = U Λ Uᵀ`, the shrinkage weights are
/// `w_i = 1/(1 + λΛ_i)`, `edf = Σ w_i`, and with `c = UᵀQᵀy`,
/// `RSS = ‖y‖² − ‖c‖² + Σ (1 − w_i)² c_i²`.
pub(crate) struct PenalizedProblem {
    n: usize,
    eigenvalues: Vec<f64>,
    /// `R⁻¹U`
    coef_map: DMatrix<f64>,
    c: DVector<f64>,
    y_norm2: f64,
}

impl PenalizedProblem {
    pub(crate) fn new(x: &DVector<f64>, y: &DVector<f64>, basis: &SplineBasis) -> Result<Self> {
        let n = basis.n();
        if x.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len().min(y.len()),
            });
        }
        let k = basis.k();
        let p = k + 2;
        if p > n {
            return Err(Error::SingularDesign(format!("{p} columns for {n} observations")));
        }
        let mut design = DMatrix::zeros(n, p);
        design.column_mut(0).fill(1.0);
        design.set_column(1, x);
        design.view_mut((0, 2), (n, k)).copy_from(basis.basis_matrix());

        let qr = design.qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        if r.diagonal().iter().any(|d| !(d.abs() > 1e-10 * diag_max)) {
            return Err(Error::SingularDesign("spline design is rank deficient".into()));
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularDesign("spline design is rank deficient".into()))?;
        let mut s = DMatrix::zeros(p, p);
        s.view_mut((2, 2), (k, k)).copy_from(basis.penalty_matrix());
        let mut m = r_inv.transpose() * s * &r_inv;
        m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let qty = qr.q().transpose() * y;
        let c = eig.eigenvectors.transpose() * qty;
        Ok(PenalizedProblem {
            n,
            eigenvalues: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            coef_map: r_inv * eig.eigenvectors,
            c,
            y_norm2: y.norm_squared(),
        })
    }

    fn weights(&self, lambda: f64) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues
            .iter()
            .map(move |&e| if e == 0.0 { 1.0 } else { 1.0 / (1.0 + lambda * e) })
    }

    pub(crate) fn edf(&self, lambda: f64) -> f64 {
        self.weights(lambda).sum()
    }

    pub(crate) fn rss(&self, lambda: f64) -> f64 {
        let shrink: f64 = self
            .weights(lambda)
            .zip(self.c.iter())
            .map(|(w, c)| (1.0 - w).powi(2) * c * c)
            .sum();
        (self.y_norm2 - self.c.norm_squared() + shrink).max(0.0)
    }

    pub(crate) fn gcv(&self, lambda: f64) -> f64 {
        let dof = self.n as f64 - self.edf(lambda);
        if dof <= 0.0 {
            return f64::INFINITY;
        }
        self.n as f64 * self.rss(lambda) / (dof * dof)
    }

    /// Coefficients `(β₀, β_x)` and `se(β̂_x)` at `λ`.
    pub(crate) fn coefficients(&self, lambda: f64) -> (f64, f64, f64) {
        let w: Vec<f64> = self.weights(lambda).collect();
        let wc = DVector::from_fn(w.len(), |i, _| w[i] * self.c[i]);
        let beta = &self.coef_map * wc;
        let edf: f64 = w.iter().sum();
        let dof = self.n as f64 - edf;
        let sigma2 = if dof > 0.0 { self.rss(lambda) / dof } else { f64::NAN };
        let row = self.coef_map.row(1);
        let var: f64 = row.iter().zip(&w).map(|(a, w)| a * a * w * w).sum::<f64>() * sigma2;
        (beta[0], beta[1], var.max(0.0).sqrt())
    }

    /// `(λ, at_boundary)` minimizing GCV on a log grid refined by golden section.
    fn gcv_lambda(&self) -> (f64, bool) {
        let (lo, hi) = (GCV_LAMBDA_RANGE.0.ln(), GCV_LAMBDA_RANGE.1.ln());
        let step = (hi - lo) / (GCV_GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GCV_GRID_POINTS).map(|i| lo + step * i as f64).collect();
        let scores: Vec<f64> = grid.iter().map(|&l| self.gcv(l.exp())).collect();
        let best = (0..grid.len())
            .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .unwrap_or(0);
        if best == 0 || best == grid.len() - 1 {
            return (grid[best].exp(), true);
        }
        let (l, _) = golden_section(|l| self.gcv(l.exp()), grid[best - 1], grid[best + 1], 1e-6);
        (l.exp(), false)
    }

    /// `λ` with `edf(λ) = target` by bisection on `ln λ`.
    fn lambda_for_edf(&self, target: f64) -> Result<f64> {
        let max_edf = self.eigenvalues.len() as f64;
        let min_edf = self.eigenvalues.iter().filter(|&&e| e == 0.0).count() as f64;
        if !(target > min_edf && target <= max_edf) {
            return Err(Error::InvalidParameter(format!(
                "target e.d.f. {target} outside the attainable range ({min_edf}, {max_edf}]"
            )));
        }
        if target >= max_edf - EDF_TOLERANCE {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (-60.0f64, 60.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let e = self.edf(mid.exp());
            if (e - target).abs() < EDF_TOLERANCE {
                return Ok(mid.exp());
            }
            if e > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }
}

/// Penalized (or unpenalized) partial-spline fit of `Y` on `X` plus the
/// spatial smooth.
pub fn partial_spline_fit(
    x: &DVector<f64>,
    y: &DVector<f64>,
    basis: &SplineBasis,
    control: SmoothControl,
) -> Result<FitResult> {
    let problem = PenalizedProblem::new(x, y, basis)?;
    let (lambda, at_boundary) = match control {
        SmoothControl::Gcv => problem.gcv_lambda(),
        SmoothControl::FixedEdf(target) => (problem.lambda_for_edf(target)?, false),
        SmoothControl::Lambda(l) if l >= 0.0 && l.is_finite() => (l, false),
        SmoothControl::Lambda(l) => {
            return Err(Error::InvalidParameter(format!(
                "smoothing parameter must be >= 0, got {l}"
            )))
        }
        SmoothControl::Unpenalized => (0.0, false),
    };
    let (beta0, beta_x, se_beta_x) = problem.coefficients(lambda);
    Ok(FitResult {
        method: if control == SmoothControl::Unpenalized {
            Method::RegSpline
        } else {
            Method::PenSpline
        },
        beta0,
        beta_x,
        se_beta_x,
        variance_components: None,
        edf: Some(problem.edf(lambda)),
        lambda: Some(lambda),
        loglik: None,
        converged: true,
        at_boundary,
    })
}

/// Regression spline whose total e.d.f. (intercept and exposure included)
/// equals `edf`; the smooth gets `edf − 2` columns.
pub fn regression_spline_fit(x: &DVector<f64>, y: &DVector<f64>, locs: &LocationSet, edf: usize) -> Result<FitResult> {
    if edf < 5 {
        return Err(Error::InvalidParameter(format!(
            "regression spline needs at least 5 e.d.f., got {edf}"
        )));
    }
    let basis = build_tps_basis(locs, edf - 2)?;
    partial_spline_fit(x, y, &basis, SmoothControl::Unpenalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ols_fit;
    use crate::fields::{sample_grid, sample_uniform, standard_normal_vector};
    use crate::rng;

    fn toy(n: usize, seed: u64) -> (LocationSet, DVector<f64>, DVector<f64>) {
        let locs = sample_uniform(n, seed).unwrap();
        let mut r = rng::stream(seed, &[9]);
        let noise = standard_normal_vector(n, &mut r);
        let x = standard_normal_vector(n, &mut r);
        let y = DVector::from_fn(n, |i, _| {
            let [a, b] = locs.coords()[i];
            0.5 * x[i] + (3.0 * a).sin() + b * b + 0.3 * noise[i]
        });
        (locs, x, y)
    }

    #[test]
    fn eta_values() {
        assert_eq!(tps_eta(1.0), 0.0);
        assert_eq!(tps_eta(0.0), 0.0);
        assert!((tps_eta(2.0) - 4.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn penalty_is_psd_and_ignores_linear_terms() {
        let locs = sample_uniform(60, 3).unwrap();
        let basis = build_tps_basis(&locs, 20).unwrap();
        let p = basis.penalty_matrix();
        assert!((p - p.transpose()).amax() < 1e-12);
        assert!(SymmetricEigen::new(p.clone()).eigenvalues.min() > -1e-10);
        let mut gamma = DVector::zeros(20);
        gamma[0] = 1.3;
        gamma[1] = -0.4;
        assert!((gamma.transpose() * p * &gamma)[0].abs() < 1e-10);
        for col in basis.basis_matrix().column_iter() {
            assert!(col.mean().abs() < 1e-12);
        }
        assert_eq!(basis.knots().len(), 21);
    }

    #[test]
    fn dimension_errors() {
        let locs = sample_uniform(10, 1).unwrap();
        assert!(build_tps_basis(&locs, 2).is_err());
        assert!(build_tps_basis(&locs, 10).is_err());
        assert!(build_tps_basis(&locs, 9).is_ok());
    }

    #[test]
    fn knots_are_distinct_and_spread() {
        let locs = sample_grid(100).unwrap();
        let basis = build_tps_basis(&locs, 8).unwrap();
        let k = basis.knots();
        for i in 0..k.len() {
            for j in 0..i {
                assert!(k[i] != k[j]);
            }
        }
        assert!(k.iter().any(|c| c[0] == 0.0 || c[0] == 1.0));
    }

    #[test]
    fn full_rank_basis_interpolates() {
        // With k = n − 1 every location is a knot and [1, B] is square.
        let n = 30;
        let locs = sample_uniform(n, 11).unwrap();
        let basis = build_tps_basis(&locs, n - 1).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            let [a, b] = locs.coords()[i];
            (2.0 * a).cos() + a * b
        });
        let design = DMatrix::from_fn(n, n, |i, j| if j == 0 { 1.0 } else { basis.basis_matrix()[(i, j - 1)] });
        let coef = design.clone().lu().solve(&y).unwrap();
        assert!((design * coef - &y).amax() < 1e-6);
    }

    #[test]
    fn limits_of_lambda() {
        let (locs, x, y) = toy(100, 5);
        let basis = build_tps_basis(&locs, 10).unwrap();
        let f0 = partial_spline_fit(&x, &y, &basis, SmoothControl::Unpenalized).unwrap();
        assert!((f0.edf.unwrap() - 12.0).abs() < 1e-10);
        assert_eq!(f0.method, Method::RegSpline);

        let mut design = DMatrix::zeros(100, 11);
        design.set_column(0, &x);
        design.view_mut((0, 1), (100, 10)).copy_from(basis.basis_matrix());
        let full = DMatrix::from_fn(100, 12, |i, j| if j == 0 { 1.0 } else { design[(i, j - 1)] });
        let beta = full.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        assert!((beta[1] - f0.beta_x).abs() < 1e-9);

        let big = partial_spline_fit(&x, &y, &basis, SmoothControl::Lambda(1e12)).unwrap();
        assert!((big.edf.unwrap() - 4.0).abs() < 1e-3);
        let lin = DMatrix::from_fn(100, 4, |i, j| match j {
            0 => 1.0,
            1 => x[i],
            2 => locs.coords()[i][0],
            _ => locs.coords()[i][1],
        });
        let beta = lin.svd(true, true).solve(&y, 1e-14).unwrap();
        assert!((beta[1] - big.beta_x).abs() < 1e-4);
    }

    #[test]
    fn edf_is_monotone_in_lambda() {
        let (locs, x, y) = toy(100, 6);
        let basis = build_tps_basis(&locs, 40).unwrap();
        let problem = PenalizedProblem::new(&x, &y, &basis).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..=60 {
            let e = problem.edf(10f64.powf(-6.0 + 0.2 * i as f64));
            assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn fixed_edf_hits_target() {
        let (locs, x, y) = toy(100, 7);
        let basis = build_tps_basis(&locs, 60).unwrap();
        for target in [5.0, 15.0, 30.0] {
            let f = partial_spline_fit(&x, &y, &basis, SmoothControl::FixedEdf(target)).unwrap();
            assert!((f.edf.unwrap() - target).abs() < 0.05);
        }
        assert!(partial_spline_fit(&x, &y, &basis, SmoothControl::FixedEdf(3.0)).is_err());
        assert!(partial_spline_fit(&x, &y, &basis, SmoothControl::FixedEdf(70.0)).is_err());
    }

    #[test]
    fn gcv_recovers_signal() {
        let (locs, x, y) = toy(100, 8);
        let basis = build_tps_basis(&locs, 40).unwrap();
        let f = partial_spline_fit(&x, &y, &basis, SmoothControl::Gcv).unwrap();
        assert!(f.edf.unwrap() > 4.0 && f.edf.unwrap() < 42.0);
        assert!((f.beta_x - 0.5).abs() < 0.2);
        let ols = ols_fit(&x, &y).unwrap();
        assert!(f.se_beta_x < ols.se_beta_x);
    }

    #[test]
    fn regression_spline_edf_convention() {
        let (locs, x, y) = toy(100, 9);
        let f = regression_spline_fit(&x, &y, &locs, 15).unwrap();
        assert!((f.edf.unwrap() - 15.0).abs() < 1e-10);
        assert!(regression_spline_fit(&x, &y, &locs, 4).is_err());
    }
}
