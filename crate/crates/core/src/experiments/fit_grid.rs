//! Replicated fits of the confounded-exposure scenario over a `(θ_c, θ_u)` grid.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bias::{BiasOperator, Weighting};
use crate::estimators::{gls_fit_factored, mixed_fit, ols_fit, Criterion, FitResult, MixedOptions};
use crate::fields::{CalibrationFactors, Design, ResidualField, ScenarioFields, ScenarioParams};
use crate::linalg::SpdFactor;
use crate::rng::{mix_keys, stream, tag};
use crate::splines::{build_tps_basis, partial_spline_fit, regression_spline_fit, SmoothControl};
use crate::stats::{variance_with_se, McEstimate};
use crate::{Error, Result};

/// Normal quantile for nominal 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitMethod {
    /// `β_x + k(X)·ρ(σ_z/σ_c)β_z`: the conditional mean of known-covariance GLS.
    Theory,
    Ols,
    /// GLS with the true residual covariance.
    Gls,
    Ml,
    Reml,
    /// Penalized spline with GCV-selected smoothing.
    Gcv,
    /// Regression spline with the given total e.d.f.
    RegSpline(usize),
    /// Penalized spline held at the given total e.d.f.
    PenSpline(usize),
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitMethod::Theory => f.write_str("theory"),
            FitMethod::Ols => f.write_str("ols"),
            FitMethod::Gls => f.write_str("gls"),
            FitMethod::Ml => f.write_str("ml"),
            FitMethod::Reml => f.write_str("reml"),
            FitMethod::Gcv => f.write_str("gcv"),
            FitMethod::RegSpline(e) => write!(f, "regspline{e}"),
            FitMethod::PenSpline(e) => write!(f, "penspline{e}"),
        }
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let edf = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad e.d.f. in method {s:?}")))
        };
        Ok(match s.as_str() {
            "theory" => FitMethod::Theory,
            "ols" => FitMethod::Ols,
            "gls" => FitMethod::Gls,
            "ml" => FitMethod::Ml,
            "reml" => FitMethod::Reml,
            "gcv" => FitMethod::Gcv,
            _ if s.starts_with("regspline") => FitMethod::RegSpline(edf(&s["regspline".len()..])?),
            _ if s.starts_with("penspline") => FitMethod::PenSpline(edf(&s["penspline".len()..])?),
            _ => return Err(Error::InvalidParameter(format!("unknown fit method {s:?}"))),
        })
    }
}

/// Everything that defines a fit grid except the grid itself.
#[derive(Debug, Clone)]
pub struct FitGridSpec {
    pub theta_c: Vec<f64>,
    pub theta_u: Vec<f64>,
    /// Template; `theta_c`/`theta_u` are replaced per cell.
    pub params: ScenarioParams,
    /// Range of the extra residual field; `None` ties it to `θ_u`.
    pub theta_h: Option<f64>,
    pub n: usize,
    pub n_sims: usize,
    pub design: Design,
    pub calibrate: bool,
    pub calibration_reps: usize,
    pub nu_fit: f64,
    pub spline_k: usize,
    pub methods: Vec<FitMethod>,
    pub seed: u64,
}

impl FitGridSpec {
    pub fn cell_params(&self, theta_c: f64, theta_u: f64) -> ScenarioParams {
        let mut p = ScenarioParams {
            theta_c,
            theta_u,
            ..self.params
        };
        if let Some(h) = p.residual_field.as_mut() {
            h.theta_h = self.theta_h.unwrap_or(theta_u);
        }
        p
    }

    fn cells(&self) -> Vec<(f64, f64)> {
        self.theta_c
            .iter()
            .flat_map(|&c| self.theta_u.iter().map(move |&u| (c, u)))
            .collect()
    }
}

/// One estimate from one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub beta_x: f64,
    /// `NaN` when the method has no standard error.
    pub se: f64,
    pub edf: Option<f64>,
}

impl From<&FitResult> for Estimate {
    fn from(f: &FitResult) -> Self {
        Estimate {
            beta_x: f.beta_x,
            se: f.se_beta_x,
            edf: f.edf,
        }
    }
}

/// Raw replicate estimates for one cell; `None` marks an excluded fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCellData {
    pub theta_c: f64,
    pub theta_u: f64,
    pub calibration: CalibrationFactors,
    pub methods: Vec<FitMethod>,
    /// `estimates[m][r]` for method `m` and replicate `r`.
    pub estimates: Vec<Vec<Option<Estimate>>>,
}

fn cell_keys(theta_c: f64, theta_u: f64) -> [u64; 2] {
    [theta_c.to_bits(), theta_u.to_bits()]
}

fn cell_calibration(spec: &FitGridSpec, theta_c: f64, theta_u: f64) -> Result<CalibrationFactors> {
    if !spec.calibrate {
        return Ok(CalibrationFactors::NONE);
    }
    let [kc, ku] = cell_keys(theta_c, theta_u);
    let seed = mix_keys(spec.seed, &[kc, ku, tag::CALIBRATION]);
    CalibrationFactors::compute(
        &spec.cell_params(theta_c, theta_u),
        spec.n,
        &spec.design,
        spec.calibration_reps,
        seed,
    )
}

/// Draws one data set and applies every method. Data-generation failures are
/// errors; fit failures become `None`.
pub fn simulate_replicate(
    spec: &FitGridSpec,
    theta_c: f64,
    theta_u: f64,
    calibration: CalibrationFactors,
    rep: u64,
) -> Result<Vec<Option<Estimate>>> {
    let params = spec.cell_params(theta_c, theta_u);
    let [kc, ku] = cell_keys(theta_c, theta_u);
    let locs = spec
        .design
        .sample(spec.n, &mut stream(spec.seed, &[kc, ku, rep, tag::LOCATIONS]))?;
    let fields = ScenarioFields::new(&locs, &params, calibration)?;
    let draw = fields.sample_confounded_pair(&mut stream(spec.seed, &[kc, ku, rep, tag::EXPOSURE]));
    let multiscale = params.residual_field.is_some();
    let y = fields.sample_outcome(
        &draw.x,
        &draw.z,
        multiscale,
        &mut stream(spec.seed, &[kc, ku, rep, tag::OUTCOME]),
    )?;

    let needs_basis = spec
        .methods
        .iter()
        .any(|m| matches!(m, FitMethod::Gcv | FitMethod::PenSpline(_)));
    let basis = if needs_basis {
        Some(build_tps_basis(&locs, spec.spline_k)?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(spec.methods.len());
    for method in &spec.methods {
        let fit: Result<Estimate> = match *method {
            FitMethod::Theory => BiasOperator::from_fields(&fields, Weighting::Gls).and_then(|op| {
                let k = op.k(&draw.x)?;
                Ok(Estimate {
                    beta_x: params.beta_x + k * params.same_scale_bias_multiplier(),
                    se: f64::NAN,
                    edf: None,
                })
            }),
            FitMethod::Ols => ols_fit(&draw.x, &y).map(|f| Estimate::from(&f)),
            FitMethod::Gls => true_residual_factor(&fields)
                .and_then(|factor| gls_fit_factored(&draw.x, &y, &factor).map(|f| Estimate::from(&f))),
            FitMethod::Ml | FitMethod::Reml => {
                let criterion = if *method == FitMethod::Ml {
                    Criterion::Ml
                } else {
                    Criterion::Reml
                };
                mixed_fit(&draw.x, &y, &locs, spec.nu_fit, criterion, &MixedOptions::default())
                    .map(|f| Estimate::from(&f))
            }
            FitMethod::Gcv => partial_spline_fit(&draw.x, &y, basis.as_ref().expect("basis built"), SmoothControl::Gcv)
                .map(|f| Estimate::from(&f)),
            FitMethod::RegSpline(edf) => regression_spline_fit(&draw.x, &y, &locs, edf).map(|f| Estimate::from(&f)),
            FitMethod::PenSpline(edf) => partial_spline_fit(
                &draw.x,
                &y,
                basis.as_ref().expect("basis built"),
                SmoothControl::FixedEdf(edf as f64),
            )
            .map(|f| Estimate::from(&f)),
        };
        out.push(fit.ok().filter(|e| e.beta_x.is_finite()));
    }
    Ok(out)
}

/// Marginal covariance of `β_z Z + h + ε`.
fn true_residual_factor(fields: &ScenarioFields) -> Result<SpdFactor> {
    let p = fields.params();
    let d = fields.calibration();
    let n = fields.factor_c().dim();
    let mut cov = fields.factor_c().matrix() * (p.beta_z * p.beta_z * p.sigma_z2 * d.d_c * d.d_c)
        + DMatrix::identity(n, n) * p.tau2;
    if let (Some(ResidualField { sigma_h2, .. }), Some(fh)) = (p.residual_field, fields.factor_h()) {
        cov += fh.matrix() * (sigma_h2 * d.d_h * d.d_h);
    }
    SpdFactor::new(&cov)
}

/// Simulates every cell; replicates of all cells share one parallel pool and
/// are regrouped in grid order.
pub fn simulate_fit_grid(spec: &FitGridSpec) -> Result<Vec<FitCellData>> {
    if spec.n_sims < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicates, got {}",
            spec.n_sims
        )));
    }
    if spec.theta_c.is_empty() || spec.theta_u.is_empty() || spec.methods.is_empty() {
        return Err(Error::InvalidParameter(
            "grids and method list must be non-empty".into(),
        ));
    }
    let cells = spec.cells();
    let calibrations: Vec<CalibrationFactors> = cells
        .par_iter()
        .map(|&(c, u)| cell_calibration(spec, c, u))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|i| (0..spec.n_sims as u64).map(move |r| (i, r)))
        .collect();
    let results: Vec<Vec<Option<Estimate>>> = tasks
        .par_iter()
        .map(|&(i, r)| simulate_replicate(spec, cells[i].0, cells[i].1, calibrations[i], r))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(cells.len());
    for (i, &(c, u)) in cells.iter().enumerate() {
        let reps = &results[i * spec.n_sims..(i + 1) * spec.n_sims];
        let estimates = (0..spec.methods.len())
            .map(|m| reps.iter().map(|r| r[m]).collect())
            .collect();
        out.push(FitCellData {
            theta_c: c,
            theta_u: u,
            calibration: calibrations[i],
            methods: spec.methods.clone(),
            estimates,
        });
    }
    Ok(out)
}

/// Per-method summary of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub theta_c: f64,
    pub theta_u: f64,
    pub method: FitMethod,
    pub n_used: usize,
    pub n_excluded: usize,
    pub estimate: McEstimate,
    /// `(mean − β_x)/β_x`; `NaN` when `β_x = 0`.
    pub rel_bias: McEstimate,
    pub variance: (f64, f64),
    pub mse: McEstimate,
    pub mean_se2: McEstimate,
    pub coverage: McEstimate,
    pub mean_edf: Option<f64>,
}

impl FitSummary {
    pub const CSV_HEADER: [&'static str; 20] = [
        "theta_c",
        "theta_u",
        "method",
        "n_sims",
        "n_excluded",
        "mean_estimate",
        "mean_estimate_se",
        "rel_bias",
        "rel_bias_se",
        "variance",
        "variance_se",
        "mse",
        "mse_se",
        "mean_se2",
        "mean_se2_se",
        "coverage",
        "coverage_se",
        "mean_edf",
        "d_c",
        "d_u",
    ];
}

/// Summaries for every method of a cell.
pub fn summarize_cell(cell: &FitCellData, beta_x: f64) -> Vec<FitSummary> {
    cell.methods
        .iter()
        .zip(&cell.estimates)
        .map(|(&method, reps)| {
            let used: Vec<Estimate> = reps.iter().flatten().copied().collect();
            let b: Vec<f64> = used.iter().map(|e| e.beta_x).collect();
            let estimate = McEstimate::from_samples(&b);
            let rel_bias = if beta_x != 0.0 {
                McEstimate {
                    mean: (estimate.mean - beta_x) / beta_x,
                    se: estimate.se / beta_x.abs(),
                    n: estimate.n,
                }
            } else {
                McEstimate {
                    mean: f64::NAN,
                    se: f64::NAN,
                    n: estimate.n,
                }
            };
            let sq: Vec<f64> = b.iter().map(|v| (v - beta_x).powi(2)).collect();
            let has_se = used.iter().all(|e| e.se.is_finite());
            let (mean_se2, coverage) = if has_se && !used.is_empty() {
                let se2: Vec<f64> = used.iter().map(|e| e.se * e.se).collect();
                let hit: Vec<f64> = used
                    .iter()
                    .map(|e| {
                        if (e.beta_x - beta_x).abs() <= Z_95 * e.se {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (McEstimate::from_samples(&se2), McEstimate::from_samples(&hit))
            } else {
                let nan = McEstimate {
                    mean: f64::NAN,
                    se: f64::NAN,
                    n: used.len(),
                };
                (nan, nan)
            };
            let edfs: Vec<f64> = used.iter().filter_map(|e| e.edf).collect();
            FitSummary {
                theta_c: cell.theta_c,
                theta_u: cell.theta_u,
                method,
                n_used: used.len(),
                n_excluded: reps.len() - used.len(),
                estimate,
                rel_bias,
                variance: variance_with_se(&b),
                mse: McEstimate::from_samples(&sq),
                mean_se2,
                coverage,
                mean_edf: (!edfs.is_empty()).then(|| edfs.iter().sum::<f64>() / edfs.len() as f64),
            }
        })
        .collect()
}

impl FitSummary {
    pub fn csv_record(&self, calibration: CalibrationFactors) -> Vec<String> {
        vec![
            self.theta_c.to_string(),
            self.theta_u.to_string(),
            self.method.to_string(),
            self.n_used.to_string(),
            self.n_excluded.to_string(),
            self.estimate.mean.to_string(),
            self.estimate.se.to_string(),
            self.rel_bias.mean.to_string(),
            self.rel_bias.se.to_string(),
            self.variance.0.to_string(),
            self.variance.1.to_string(),
            self.mse.mean.to_string(),
            self.mse.se.to_string(),
            self.mean_se2.mean.to_string(),
            self.mean_se2.se.to_string(),
            self.coverage.mean.to_string(),
            self.coverage.se.to_string(),
            self.mean_edf.map(|v| v.to_string()).unwrap_or_default(),
            calibration.d_c.to_string(),
            calibration.d_u.to_string(),
        ]
    }
}

/// Paired summary of `a − b` over replicates where both fits succeeded.
pub fn paired_difference(a: &[Option<Estimate>], b: &[Option<Estimate>]) -> McEstimate {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some(x.beta_x - y.beta_x),
            _ => None,
        })
        .collect();
    McEstimate::from_samples(&diffs)
}
