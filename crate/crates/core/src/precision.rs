//! Precision of the GLS slope and the OLS variance ratios for an exposure
//! `X ~ N(μ_x, σ_x² R(θ_x))` and residual covariance
//! `(σ_g² + τ²) Σ̃`, `Σ̃ = (1 − p_g) I + p_g R(θ_g)`.
//!
//! Averaged over `X`, the GLS precision is
//! `σ_x²/(σ_g² + τ²) · (tr(Σ̃⁻¹R_x) − 1ᵀΣ̃⁻¹R_xΣ̃⁻¹1 / 1ᵀΣ̃⁻¹1)`;
//! the term in parentheses is an effective sample size.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::{correlation_from_distances, MaternSpec};
use crate::estimators::ols_true_variance;
use crate::fields::{calibration_factor, standard_normal_vector, Design, LocationSet};
use crate::linalg::{intercept_design, SpdFactor};
use crate::rng::{mix_keys, stream, tag};
use crate::stats::McEstimate;
use crate::{Error, Result};

/// Scales and variances of one precision scenario at fixed locations.
#[derive(Debug, Clone)]
pub struct PrecisionInputs {
    pub locs: LocationSet,
    pub theta_x: f64,
    pub theta_g: f64,
    pub p_g: f64,
    pub nu: f64,
    pub sigma_x2: f64,
    /// `σ_g² + τ²`.
    pub total_resid: f64,
    /// Calibration factors for the exposure and the residual field.
    pub d_x: f64,
    pub d_g: f64,
}

impl PrecisionInputs {
    pub fn new(locs: LocationSet, theta_x: f64, theta_g: f64, p_g: f64) -> Self {
        PrecisionInputs {
            locs,
            theta_x,
            theta_g,
            p_g,
            nu: 2.0,
            sigma_x2: 1.0,
            total_resid: 1.0,
            d_x: 1.0,
            d_g: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_g) {
            return Err(Error::InvalidParameter(format!(
                "p_g must lie in [0, 1], got {}",
                self.p_g
            )));
        }
        if !(self.sigma_x2 >= 0.0) || !(self.total_resid > 0.0) {
            return Err(Error::InvalidParameter(
                "variances must be non-negative, residual total positive".into(),
            ));
        }
        if self.locs.len() < 3 {
            return Err(Error::InvalidParameter(format!("need n ≥ 3, got {}", self.locs.len())));
        }
        Ok(())
    }

    /// `(d_x² R(θ_x), Σ̃)`.
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.validate()?;
        let dist = self.locs.distance_matrix();
        let r_x = correlation_from_distances(&dist, &MaternSpec::new(self.theta_x, self.nu)?) * (self.d_x * self.d_x);
        let n = self.locs.len();
        let sigma = if self.p_g == 0.0 {
            DMatrix::identity(n, n)
        } else {
            let r_g = correlation_from_distances(&dist, &MaternSpec::new(self.theta_g, self.nu)?);
            r_g * (self.p_g * self.d_g * self.d_g) + DMatrix::identity(n, n) * (1.0 - self.p_g)
        };
        Ok((r_x, sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedPrecision {
    pub precision: f64,
    pub effective_sample_size: f64,
}

/// Expected GLS precision given the correlation matrices.
pub fn expected_precision_from(r_x: &DMatrix<f64>, sigma: &DMatrix<f64>, scale: f64) -> Result<ExpectedPrecision> {
    let factor = SpdFactor::new(sigma)?;
    let n = sigma.nrows();
    let sinv_rx = factor.solve_mat(r_x);
    let sinv_one = factor.solve(&DVector::from_element(n, 1.0));
    let trace = sinv_rx.trace();
    let denom = sinv_one.sum();
    let quad = (r_x * &sinv_one).dot(&sinv_one);
    let ess = trace - quad / denom;
    Ok(ExpectedPrecision {
        precision: scale * ess,
        effective_sample_size: ess,
    })
}

pub fn expected_gls_precision(inputs: &PrecisionInputs) -> Result<ExpectedPrecision> {
    let (r_x, sigma) = inputs.matrices()?;
    expected_precision_from(&r_x, &sigma, inputs.sigma_x2 / inputs.total_resid)
}

/// The same expectation evaluated from `E[𝒳ᵀΣ⁻¹𝒳]` with a nonzero exposure
/// mean, where the `μ_x²` contributions cancel.
pub fn expected_gls_precision_with_mean(inputs: &PrecisionInputs, mu_x: f64) -> Result<f64> {
    let (r_x, sigma) = inputs.matrices()?;
    let n = sigma.nrows();
    let second_moment = &r_x * inputs.sigma_x2 + DMatrix::from_element(n, n, mu_x * mu_x);
    let factor = SpdFactor::new(&(sigma * inputs.total_resid))?;
    let sinv_one = factor.solve(&DVector::from_element(n, 1.0));
    let a = sinv_one.sum();
    let b = (&second_moment * &sinv_one).dot(&sinv_one);
    let c = factor.solve_mat(&second_moment).trace();
    // E[XᵀΣ⁻¹X] − E[(1ᵀΣ⁻¹X)²]/1ᵀΣ⁻¹1
    Ok(c - b / a)
}

/// Slope precision `[(𝒳ᵀΣ⁻¹𝒳)⁻¹]₂₂⁻¹` for a given exposure.
pub fn gls_precision(x: &DVector<f64>, factor: &SpdFactor) -> f64 {
    let wd = factor.whiten_mat(&intercept_design(x));
    let info = wd.transpose() * wd;
    info[(1, 1)] - info[(0, 1)] * info[(0, 1)] / info[(0, 0)]
}

/// `(1/n) WᵀΣ̃W` with `W = (X − X̄)/s` and `s²` the divide-by-`n` variance.
pub fn naive_ols_variance_ratio(x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.nrows(),
        });
    }
    let xc = x.add_scalar(-x.mean());
    let ss = xc.norm_squared();
    if !(ss > 1e-24 * x.norm_squared().max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularDesign("exposure is constant".into()));
    }
    let w = xc / (ss / n as f64).sqrt();
    Ok((sigma * &w).dot(&w) / n as f64)
}

/// True over GLS variance of the slope for one exposure draw, `Σ` known.
pub fn gls_ols_ratio_for(x: &DVector<f64>, sigma: &DMatrix<f64>, factor: &SpdFactor) -> Result<f64> {
    Ok(ols_true_variance(x, sigma)? * gls_precision(x, factor))
}

/// One `(θ_x, θ_g, p_g)` scenario whose locations are drawn from a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionScenario {
    pub theta_x: f64,
    pub theta_g: f64,
    pub p_g: f64,
    pub nu: f64,
    pub n: usize,
    pub design: Design,
    pub calibrate: bool,
    pub calibration_reps: usize,
}

/// Monte Carlo summaries of the three precision statistics for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCell {
    pub theta_x: f64,
    pub theta_g: f64,
    pub p_g: f64,
    /// Closed-form expected precision relative to `σ_x²(n−1)/(σ_g² + τ²)`, averaged over locations.
    pub relative_gls: McEstimate,
    pub gls_ols_ratio: McEstimate,
    pub naive_ratio: McEstimate,
}

impl PrecisionCell {
    pub const CSV_HEADER: [&'static str; 7] = ["theta_x", "theta_g", "p_g", "statistic", "mean", "se", "n_sims"];

    /// Three rows, natural-log scale (delta-method SE).
    pub fn csv_records(&self) -> Vec<Vec<String>> {
        [
            ("ln_relative_gls_precision", &self.relative_gls),
            ("ln_gls_ols_precision_ratio", &self.gls_ols_ratio),
            ("ln_true_naive_variance_ratio", &self.naive_ratio),
        ]
        .iter()
        .map(|(name, est)| {
            let l = est.ln();
            vec![
                self.theta_x.to_string(),
                self.theta_g.to_string(),
                self.p_g.to_string(),
                name.to_string(),
                l.mean.to_string(),
                l.se.to_string(),
                l.n.to_string(),
            ]
        })
        .collect()
    }
}

fn scenario_keys(s: &PrecisionScenario) -> [u64; 3] {
    [s.theta_x.to_bits(), s.theta_g.to_bits(), s.p_g.to_bits()]
}

/// Calibration factors `(d_x, d_g)` for a scenario.
pub fn scenario_calibration(s: &PrecisionScenario, seed: u64) -> Result<(f64, f64)> {
    if !s.calibrate {
        return Ok((1.0, 1.0));
    }
    let [a, b, _] = scenario_keys(s);
    let cal_seed = mix_keys(seed, &[a, b, tag::CALIBRATION]);
    let d_x = calibration_factor(
        &MaternSpec::new(s.theta_x, s.nu)?,
        s.n,
        &s.design,
        s.calibration_reps,
        cal_seed,
    )?;
    let d_g = calibration_factor(
        &MaternSpec::new(s.theta_g, s.nu)?,
        s.n,
        &s.design,
        s.calibration_reps,
        cal_seed,
    )?;
    Ok((d_x, d_g))
}

/// Per replicate: draw locations, evaluate the closed-form expectation, then one
/// exposure draw for the GLS/OLS and true/naive ratios.
pub fn precision_cell(s: &PrecisionScenario, n_sims: usize, seed: u64) -> Result<PrecisionCell> {
    if n_sims < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicates, got {n_sims}"
        )));
    }
    let (d_x, d_g) = scenario_calibration(s, seed)?;
    let keys = scenario_keys(s);
    let mut relative = Vec::with_capacity(n_sims);
    let mut gls_ols = Vec::with_capacity(n_sims);
    let mut naive = Vec::with_capacity(n_sims);
    for rep in 0..n_sims as u64 {
        let mut loc_rng = stream(seed, &[keys[0], keys[1], keys[2], rep, tag::LOCATIONS]);
        let locs = s.design.sample(s.n, &mut loc_rng)?;
        let inputs = PrecisionInputs {
            nu: s.nu,
            d_x,
            d_g,
            ..PrecisionInputs::new(locs, s.theta_x, s.theta_g, s.p_g)
        };
        let (r_x, sigma) = inputs.matrices()?;
        let exact = expected_precision_from(&r_x, &sigma, 1.0)?;
        relative.push(exact.effective_sample_size / (s.n as f64 - 1.0));

        let mut rng = stream(seed, &[keys[0], keys[1], keys[2], rep, tag::EXPOSURE]);
        let x = SpdFactor::new(&r_x)?.color(&standard_normal_vector(s.n, &mut rng));
        let factor = SpdFactor::new(&sigma)?;
        gls_ols.push(gls_ols_ratio_for(&x, &sigma, &factor)?);
        naive.push(naive_ols_variance_ratio(&x, &sigma)?);
    }
    Ok(PrecisionCell {
        theta_x: s.theta_x,
        theta_g: s.theta_g,
        p_g: s.p_g,
        relative_gls: McEstimate::from_samples(&relative),
        gls_ols_ratio: McEstimate::from_samples(&gls_ols),
        naive_ratio: McEstimate::from_samples(&naive),
    })
}

/// Relative expected GLS precision averaged over `n_location_reps` location sets.
pub fn relative_gls_precision(s: &PrecisionScenario, n_location_reps: usize, seed: u64) -> Result<McEstimate> {
    Ok(precision_cell(s, n_location_reps, seed)?.relative_gls)
}

/// Monte Carlo mean of the true-OLS over GLS variance ratio at fixed locations.
pub fn gls_ols_precision_ratio(
    locs: &LocationSet,
    theta_x: f64,
    theta_g: f64,
    p_g: f64,
    n_sims: usize,
    seed: u64,
) -> Result<McEstimate> {
    let (r_x, sigma) = PrecisionInputs::new(locs.clone(), theta_x, theta_g, p_g).matrices()?;
    let fx = SpdFactor::new(&r_x)?;
    let fs = SpdFactor::new(&sigma)?;
    let ratios = (0..n_sims as u64)
        .map(|rep| {
            let x = fx.color(&standard_normal_vector(
                locs.len(),
                &mut stream(seed, &[rep, tag::EXPOSURE]),
            ));
            gls_ols_ratio_for(&x, &sigma, &fs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McEstimate::from_samples(&ratios))
}

/// All cells of a precision grid, in input order, evaluated in parallel.
pub fn precision_grid(scenarios: &[PrecisionScenario], n_sims: usize, seed: u64) -> Result<Vec<PrecisionCell>> {
    scenarios.par_iter().map(|s| precision_cell(s, n_sims, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sample_uniform;

    fn brute_force(r_x: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
        let n = sigma.nrows();
        let si = sigma.clone().try_inverse().unwrap();
        let one = DVector::from_element(n, 1.0);
        let a = (&si * r_x).trace();
        let b = (one.transpose() * &si * r_x * &si * &one)[0];
        let c = (one.transpose() * &si * &one)[0];
        a - b / c
    }

    #[test]
    fn hand_sized_case() {
        let r_x = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.4, 0.1, 1.0, 0.2, 0.4, 0.2, 1.0]);
        let e = expected_precision_from(&r_x, &sigma, 2.0).unwrap();
        let b = brute_force(&r_x, &sigma);
        assert!((e.effective_sample_size - b).abs() < 1e-12);
        assert!((e.precision - 2.0 * b).abs() < 1e-12);
    }

    #[test]
    fn nonspatial_baseline() {
        let locs = sample_uniform(30, 1).unwrap();
        let mut inp = PrecisionInputs::new(locs, 1e-9, 0.5, 0.0);
        inp.sigma_x2 = 2.0;
        inp.total_resid = 4.0;
        let e = expected_gls_precision(&inp).unwrap();
        assert!((e.effective_sample_size - 29.0).abs() < 1e-9);
        assert!((e.precision - 2.0 * 29.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn mean_of_exposure_cancels() {
        let locs = sample_uniform(40, 2).unwrap();
        let mut inp = PrecisionInputs::new(locs, 0.3, 0.6, 0.7);
        inp.sigma_x2 = 1.5;
        inp.total_resid = 2.0;
        let closed = expected_gls_precision(&inp).unwrap().precision;
        for mu in [0.0, 5.0] {
            let direct = expected_gls_precision_with_mean(&inp, mu).unwrap();
            assert!((direct - closed).abs() < 1e-10 * closed.max(1.0), "mu = {mu}");
        }
    }

    #[test]
    fn naive_ratio_identity_and_affine_invariance() {
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7, 1.1]);
        assert!((naive_ols_variance_ratio(&x, &DMatrix::identity(5, 5)).unwrap() - 1.0).abs() < 1e-12);
        let sigma = DMatrix::from_fn(5, 5, |i, j| 0.6f64.powi((i as i32 - j as i32).abs()));
        let a = naive_ols_variance_ratio(&x, &sigma).unwrap();
        let b = naive_ols_variance_ratio(&(x.map(|v| -3.0 * v + 7.0)), &sigma).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(naive_ols_variance_ratio(&DVector::from_element(5, 1.0), &sigma).is_err());
    }

    #[test]
    fn naive_ratio_hand_case() {
        let x = DVector::from_vec(vec![1.0, 2.0, 4.0, 5.0]);
        let sigma = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.0, 0.0, //
                0.5, 1.0, 0.5, 0.0, //
                0.0, 0.5, 1.0, 0.5, //
                0.0, 0.0, 0.5, 1.0,
            ],
        );
        // Mean 3, deviations (−2, −1, 1, 2), s² = 2.5.
        let w = [-2.0, -1.0, 1.0, 2.0].map(|v: f64| v / 2.5f64.sqrt());
        let mut quad = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                quad += w[i] * sigma[(i, j)] * w[j];
            }
        }
        assert!((naive_ols_variance_ratio(&x, &sigma).unwrap() - quad / 4.0).abs() < 1e-12);
    }

    #[test]
    fn identity_residuals_give_unit_gls_ols_ratio() {
        let locs = sample_uniform(20, 3).unwrap();
        let est = gls_ols_precision_ratio(&locs, 0.4, 0.4, 0.0, 10, 1).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gls_never_loses_to_ols() {
        let locs = sample_uniform(40, 4).unwrap();
        let (r_x, sigma) = PrecisionInputs::new(locs, 0.1, 0.9, 0.9).matrices().unwrap();
        let fx = SpdFactor::new(&r_x).unwrap();
        let fs = SpdFactor::new(&sigma).unwrap();
        for rep in 0..20 {
            let x = fx.color(&standard_normal_vector(40, &mut stream(5, &[rep])));
            assert!(gls_ols_ratio_for(&x, &sigma, &fs).unwrap() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn cell_rows_are_log_scale() {
        let s = PrecisionScenario {
            theta_x: 0.1,
            theta_g: 0.9,
            p_g: 0.9,
            nu: 2.0,
            n: 30,
            design: Design::Uniform,
            calibrate: false,
            calibration_reps: 1,
        };
        let cell = precision_cell(&s, 5, 1).unwrap();
        let rows = cell.csv_records();
        assert_eq!(rows.len(), 3);
        let v: f64 = rows[0][4].parse().unwrap();
        assert!((v - cell.relative_gls.mean.ln()).abs() < 1e-12);
        assert!(cell.relative_gls.mean > 1.0);
    }
}
