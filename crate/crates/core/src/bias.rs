//! Bias of the slope estimate when the confounder acts at one spatial scale
//! and the exposure mixes a confounded and an unconfounded scale.
//!
//! For `X = μ_x + X_c + X_u` and `Z` correlated with `X_c` only, the GLS slope
//! with residual covariance `Σ*` has conditional bias `k(X)·ρ(σ_z/σ_c)β_z` with
//!
//! `k(X) = p_c [(𝒳ᵀΣ*⁻¹𝒳)⁻¹𝒳ᵀΣ*⁻¹ M (X − μ_x 1)]₂`,
//! `M = (p_c I + (1 − p_c) R̃_u R̃_c⁻¹)⁻¹ = R̃_c (p_c R̃_c + (1 − p_c) R̃_u)⁻¹`,
//!
//! where `R̃ = d² R` are the calibrated correlation matrices.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::estimators::gls_solve;
use crate::fields::{
    standard_normal_vector, CalibrationFactors, Design, LocationSet, ResidualField, ScenarioFields, ScenarioParams,
};
use crate::linalg::SpdFactor;
use crate::rng::{stream, tag};
use crate::stats::McEstimate;
use crate::{Error, Result};

/// Bias shared by every estimator when `σ_u² = 0`: `ρ(σ_z/σ_x)β_z`.
pub fn same_scale_bias(params: &ScenarioParams) -> Result<f64> {
    if params.sigma_u2 != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "same-scale bias needs sigma_u2 = 0, got {}",
            params.sigma_u2
        )));
    }
    if !(params.sigma_c2 > 0.0) {
        return Err(Error::InvalidParameter("exposure variance must be positive".into()));
    }
    Ok(params.same_scale_bias_multiplier())
}

/// Locations, generative parameters and calibration for one scenario.
#[derive(Debug, Clone)]
pub struct BiasInputs {
    pub locs: LocationSet,
    pub params: ScenarioParams,
    pub calibration: CalibrationFactors,
}

/// Residual weighting of the fitted regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// GLS with the known residual covariance `Σ*`.
    Gls,
    /// `Σ* = I`.
    Ols,
}

/// `k(X)` for a fixed location set, with `M` and `Σ*` factored once.
#[derive(Debug, Clone)]
pub struct BiasOperator {
    p_c: f64,
    mu_x: f64,
    /// `None` when `M = I` exactly.
    m: Option<DMatrix<f64>>,
    sigma_star: SpdFactor,
}

impl BiasOperator {
    pub fn new(inputs: &BiasInputs, weighting: Weighting) -> Result<Self> {
        let fields = ScenarioFields::new(&inputs.locs, &inputs.params, inputs.calibration)?;
        BiasOperator::from_fields(&fields, weighting)
    }

    /// Reuses the correlation factors already built for simulation.
    pub fn from_fields(fields: &ScenarioFields, weighting: Weighting) -> Result<Self> {
        let params = fields.params();
        let d = fields.calibration();
        let n = fields.factor_c().dim();
        let p_c = params.p_c();
        let r_c = fields.factor_c().matrix() * (d.d_c * d.d_c);
        let r_u = fields.factor_u().matrix() * (d.d_u * d.d_u);

        let m = if p_c == 1.0 || p_c == 0.0 || r_c == r_u {
            None
        } else {
            let mix = &r_c * p_c + &r_u * (1.0 - p_c);
            // M = R̃_c A⁻¹ and both factors are symmetric, so Mᵀ = A⁻¹R̃_c.
            Some(SpdFactor::new(&mix)?.solve_mat(&r_c).transpose())
        };

        let sigma_star = match weighting {
            Weighting::Ols => SpdFactor::new(&DMatrix::identity(n, n))?,
            Weighting::Gls => {
                let signal = params.beta_z * params.beta_z * params.sigma_z2;
                let mut cov = &r_c * signal + DMatrix::identity(n, n) * params.tau2;
                if let (Some(h), Some(factor_h)) = (params.residual_field, fields.factor_h()) {
                    cov += factor_h.matrix() * (h.sigma_h2 * d.d_h * d.d_h);
                }
                SpdFactor::new(&cov)?
            }
        };
        Ok(BiasOperator {
            p_c,
            mu_x: params.mu_x,
            m,
            sigma_star,
        })
    }

    pub fn k(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.sigma_star.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.sigma_star.dim(),
                got: x.len(),
            });
        }
        if self.p_c == 0.0 {
            return Ok(0.0);
        }
        let centered = x.add_scalar(-self.mu_x);
        let target = match &self.m {
            Some(m) => m * centered,
            None => centered,
        };
        let sol = gls_solve(x, &target, &self.sigma_star)?;
        Ok(self.p_c * sol.beta[1])
    }
}

/// `k(X)` with GLS weighting by `Σ*`.
pub fn k_of_x(x: &DVector<f64>, inputs: &BiasInputs) -> Result<f64> {
    BiasOperator::new(inputs, Weighting::Gls)?.k(x)
}

/// The OLS analogue of [`k_of_x`] (`Σ* = I`).
pub fn ols_k_of_x(x: &DVector<f64>, inputs: &BiasInputs) -> Result<f64> {
    BiasOperator::new(inputs, Weighting::Ols)?.k(x)
}

/// Settings for [`expected_k_grid`].
#[derive(Debug, Clone)]
pub struct BiasGridConfig {
    pub theta_c: Vec<f64>,
    pub theta_u: Vec<f64>,
    pub p_c: f64,
    pub p_z: f64,
    pub n: usize,
    pub design: Design,
    pub n_sims: usize,
    pub seed: u64,
    pub nu: f64,
    /// Calibrate field variances to the sampling domain.
    pub calibrate: bool,
    pub calibration_reps: usize,
    /// Share of the non-confounder residual variance moved from white noise
    /// into a residual field at scale `θ_u`.
    pub residual_field_share: Option<f64>,
}

impl BiasGridConfig {
    pub fn scenario(&self, theta_c: f64, theta_u: f64) -> ScenarioParams {
        let mut params = ScenarioParams::from_fractions(self.p_c, self.p_z, theta_c, theta_u);
        params.nu = self.nu;
        if let Some(share) = self.residual_field_share {
            let rest = 1.0 - self.p_z;
            params.tau2 = (1.0 - share) * rest;
            params.residual_field = Some(ResidualField {
                sigma_h2: share * rest,
                theta_h: theta_u,
            });
        }
        params
    }
}

/// Monte Carlo means of `k(X)` (GLS) and its OLS analogue for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCell {
    pub theta_c: f64,
    pub theta_u: f64,
    pub p_c: f64,
    pub p_z: f64,
    pub gls: McEstimate,
    pub ols: McEstimate,
}

impl BiasCell {
    pub const CSV_HEADER: [&'static str; 9] = [
        "theta_c",
        "theta_u",
        "p_c",
        "p_z",
        "mean_k",
        "se_k",
        "n_sims",
        "mean_k_ols",
        "se_k_ols",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.theta_c.to_string(),
            self.theta_u.to_string(),
            self.p_c.to_string(),
            self.p_z.to_string(),
            self.gls.mean.to_string(),
            self.gls.se.to_string(),
            self.gls.n.to_string(),
            self.ols.mean.to_string(),
            self.ols.se.to_string(),
        ]
    }
}

fn cell_keys(theta_c: f64, theta_u: f64) -> [u64; 2] {
    [theta_c.to_bits(), theta_u.to_bits()]
}

/// One grid cell: fresh `X` per replicate; locations redrawn per replicate
/// unless the design is fixed.
pub fn expected_k_cell(config: &BiasGridConfig, theta_c: f64, theta_u: f64) -> Result<BiasCell> {
    if config.n_sims < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicates, got {}",
            config.n_sims
        )));
    }
    let params = config.scenario(theta_c, theta_u);
    let [kc, ku] = cell_keys(theta_c, theta_u);
    let calibration = if config.calibrate {
        let seed = stream_seed(config.seed, &[kc, ku, tag::CALIBRATION]);
        CalibrationFactors::compute(&params, config.n, &config.design, config.calibration_reps, seed)?
    } else {
        CalibrationFactors::NONE
    };

    let mut gls = Vec::with_capacity(config.n_sims);
    let mut ols = Vec::with_capacity(config.n_sims);
    let mut fixed: Option<(ScenarioFields, BiasOperator, BiasOperator)> = None;
    for rep in 0..config.n_sims as u64 {
        let mut loc_rng = stream(config.seed, &[kc, ku, rep, tag::LOCATIONS]);
        let built;
        let (fields, op_gls, op_ols) = if config.design.is_fixed() {
            if fixed.is_none() {
                let locs = config.design.sample(config.n, &mut loc_rng)?;
                let f = ScenarioFields::new(&locs, &params, calibration)?;
                let g = BiasOperator::from_fields(&f, Weighting::Gls)?;
                let o = BiasOperator::from_fields(&f, Weighting::Ols)?;
                fixed = Some((f, g, o));
            }
            let (f, g, o) = fixed.as_ref().expect("initialized above");
            (f, g, o)
        } else {
            let locs = config.design.sample(config.n, &mut loc_rng)?;
            let f = ScenarioFields::new(&locs, &params, calibration)?;
            let g = BiasOperator::from_fields(&f, Weighting::Gls)?;
            let o = BiasOperator::from_fields(&f, Weighting::Ols)?;
            built = (f, g, o);
            (&built.0, &built.1, &built.2)
        };
        let mut rng = stream(config.seed, &[kc, ku, rep, tag::EXPOSURE]);
        let x = sample_exposure(fields, &mut rng);
        gls.push(op_gls.k(&x)?);
        ols.push(op_ols.k(&x)?);
    }
    Ok(BiasCell {
        theta_c,
        theta_u,
        p_c: config.p_c,
        p_z: config.p_z,
        gls: McEstimate::from_samples(&gls),
        ols: McEstimate::from_samples(&ols),
    })
}

fn stream_seed(master: u64, keys: &[u64]) -> u64 {
    crate::rng::mix_keys(master, keys)
}

/// `X = μ_x + d_c σ_c L_c w₁ + d_u σ_u L_u w₂`; the same draw as the
/// exposure part of [`ScenarioFields::sample_confounded_pair`] without `Z`.
pub fn sample_exposure(fields: &ScenarioFields, rng: &mut crate::rng::StreamRng) -> DVector<f64> {
    let p = fields.params();
    let d = fields.calibration();
    let n = fields.factor_c().dim();
    let w_c = standard_normal_vector(n, rng);
    let w_u = standard_normal_vector(n, rng);
    let x_c = fields.factor_c().color(&w_c) * (d.d_c * p.sigma_c2.sqrt());
    let x_u = fields.factor_u().color(&w_u) * (d.d_u * p.sigma_u2.sqrt());
    (x_c + x_u).add_scalar(p.mu_x)
}

/// Every `(θ_c, θ_u)` cell, row-major in `theta_c`; cells run in parallel on
/// the current rayon pool and come back in grid order.
pub fn expected_k_grid(config: &BiasGridConfig) -> Result<Vec<BiasCell>> {
    if config.theta_c.is_empty() || config.theta_u.is_empty() {
        return Err(Error::InvalidParameter("range grids must be non-empty".into()));
    }
    let cells: Vec<(f64, f64)> = config
        .theta_c
        .iter()
        .flat_map(|&c| config.theta_u.iter().map(move |&u| (c, u)))
        .collect();
    cells.par_iter().map(|&(c, u)| expected_k_cell(config, c, u)).collect()
}
