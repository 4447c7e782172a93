//! OLS, known-covariance GLS and ML/REML mixed-model fits of
//! `Y = β₀ + β_x X + g(s) + ε` with `g ~ GP(0, σ_g² R(θ_g))`, `ε ~ N(0, τ² I)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{correlation_from_distances, MaternSpec};
use crate::fields::LocationSet;
use crate::linalg::{intercept_design, inverse_2x2, SpdFactor};
use crate::optim::NelderMead;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ols,
    Gls,
    Ml,
    Reml,
    RegSpline,
    PenSpline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ols => "OLS",
            Method::Gls => "GLS",
            Method::Ml => "ML",
            Method::Reml => "REML",
            Method::RegSpline => "RegSpline",
            Method::PenSpline => "PenSpline",
        })
    }
}

/// Likelihood used by [`mixed_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Ml,
    Reml,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Criterion::Ml),
            "reml" => Ok(Criterion::Reml),
            other => Err(Error::InvalidParameter(format!("unknown criterion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub sigma_g2: f64,
    pub tau2: f64,
    pub theta_g: f64,
}

/// Estimates from one fit of the exposure model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub beta0: f64,
    pub beta_x: f64,
    pub se_beta_x: f64,
    pub variance_components: Option<VarianceComponents>,
    /// Trace of the hat matrix, counting the intercept and exposure columns.
    pub edf: Option<f64>,
    pub lambda: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: bool,
    /// The smoothing or variance optimum sits on the edge of its search range.
    pub at_boundary: bool,
}

impl FitResult {
    fn simple(method: Method, beta0: f64, beta_x: f64, se_beta_x: f64) -> Self {
        FitResult {
            method,
            beta0,
            beta_x,
            se_beta_x,
            variance_components: None,
            edf: None,
            lambda: None,
            loglik: None,
            converged: true,
            at_boundary: false,
        }
    }

    /// Whether `β̂_x ± z·se` contains `beta_x`.
    pub fn covers(&self, beta_x: f64, z: f64) -> bool {
        (self.beta_x - beta_x).abs() <= z * self.se_beta_x
    }

    pub const CSV_HEADER: [&'static str; 12] = [
        "method",
        "beta0",
        "beta_x",
        "se_beta_x",
        "sigma_g2",
        "tau2",
        "theta_g",
        "edf",
        "lambda",
        "loglik",
        "converged",
        "at_boundary",
    ];

    /// One CSV row; absent optional values are empty fields.
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let vc = self.variance_components;
        vec![
            self.method.to_string(),
            self.beta0.to_string(),
            self.beta_x.to_string(),
            self.se_beta_x.to_string(),
            opt(vc.map(|v| v.sigma_g2)),
            opt(vc.map(|v| v.tau2)),
            opt(vc.map(|v| v.theta_g)),
            opt(self.edf),
            opt(self.lambda),
            opt(self.loglik),
            self.converged.to_string(),
            self.at_boundary.to_string(),
        ]
    }
}

fn check_lengths(x: &DVector<f64>, y: &DVector<f64>, min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < min_n {
        return Err(Error::InvalidParameter(format!(
            "need at least {min_n} observations, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Centered exposure and its sum of squares; errors when `X` is constant.
fn centered(x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let xc = x.add_scalar(-x.mean());
    let sxx = xc.norm_squared();
    let scale = x.norm_squared().max(f64::MIN_POSITIVE);
    if !(sxx > 1e-24 * scale) || sxx == 0.0 {
        return Err(Error::SingularDesign("exposure is constant".into()));
    }
    Ok((xc, sxx))
}

/// Ordinary least squares with the naive variance `σ̂² [(𝒳ᵀ𝒳)⁻¹]₂₂`, `σ̂² = RSS/(n−2)`.
pub fn ols_fit(x: &DVector<f64>, y: &DVector<f64>) -> Result<FitResult> {
    check_lengths(x, y, 3)?;
    let (xc, sxx) = centered(x)?;
    let beta_x = xc.dot(y) / sxx;
    let beta0 = y.mean() - beta_x * x.mean();
    let rss: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(xi, yi)| (yi - beta0 - beta_x * xi).powi(2))
        .sum();
    let sigma2 = rss / (x.len() - 2) as f64;
    Ok(FitResult::simple(Method::Ols, beta0, beta_x, (sigma2 / sxx).sqrt()))
}

/// True sampling variance of the OLS slope when `Cov(Y) = Σ`:
/// `[(𝒳ᵀ𝒳)⁻¹ 𝒳ᵀΣ𝒳 (𝒳ᵀ𝒳)⁻¹]₂₂ = x̃ᵀΣx̃ / (x̃ᵀx̃)²`.
pub fn ols_true_variance(x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != x.len() || sigma.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: sigma.nrows(),
        });
    }
    let (xc, sxx) = centered(x)?;
    Ok((sigma * &xc).dot(&xc) / (sxx * sxx))
}

/// Pieces of a GLS solve shared by the fitting routines.
#[derive(Debug, Clone)]
pub(crate) struct GlsSolution {
    pub beta: [f64; 2],
    /// `(𝒳ᵀΣ⁻¹𝒳)⁻¹`
    pub cov: DMatrix<f64>,
    /// `rᵀΣ⁻¹r` at the GLS estimate.
    pub quad_form: f64,
    pub log_det_info: f64,
}

pub(crate) fn gls_solve(x: &DVector<f64>, y: &DVector<f64>, factor: &SpdFactor) -> Result<GlsSolution> {
    let design = intercept_design(x);
    let wd = factor.whiten_mat(&design);
    let wy = factor.whiten(y);
    let info = wd.transpose() * &wd;
    let cov = inverse_2x2(&info).ok_or_else(|| Error::SingularDesign("𝒳ᵀΣ⁻¹𝒳 is singular".into()))?;
    let rhs = wd.transpose() * &wy;
    let beta = &cov * rhs;
    let resid = &wy - &wd * &beta;
    let det = info[(0, 0)] * info[(1, 1)] - info[(0, 1)] * info[(1, 0)];
    Ok(GlsSolution {
        beta: [beta[0], beta[1]],
        cov,
        quad_form: resid.norm_squared(),
        log_det_info: det.ln(),
    })
}

/// GLS with known covariance `Σ`; `Var(β̂) = (𝒳ᵀΣ⁻¹𝒳)⁻¹`.
pub fn gls_fit(x: &DVector<f64>, y: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<FitResult> {
    check_lengths(x, y, 3)?;
    if sigma.nrows() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: sigma.nrows(),
        });
    }
    gls_fit_factored(x, y, &SpdFactor::new(sigma)?)
}

/// [`gls_fit`] with a precomputed Cholesky factor of `Σ`.
pub fn gls_fit_factored(x: &DVector<f64>, y: &DVector<f64>, factor: &SpdFactor) -> Result<FitResult> {
    check_lengths(x, y, 3)?;
    centered(x)?;
    let sol = gls_solve(x, y, factor)?;
    Ok(FitResult::simple(
        Method::Gls,
        sol.beta[0],
        sol.beta[1],
        sol.cov[(1, 1)].max(0.0).sqrt(),
    ))
}

/// Gaussian log-likelihood of `y` with mean `𝒳β` and covariance `Σ`.
///
/// The restricted version adds `(p/2) ln 2π − ½ ln|𝒳ᵀΣ⁻¹𝒳|` with `p = 2`.
pub fn gaussian_log_likelihood(
    x: &DVector<f64>,
    y: &DVector<f64>,
    sigma: &DMatrix<f64>,
    beta: [f64; 2],
    criterion: Criterion,
) -> Result<f64> {
    check_lengths(x, y, 1)?;
    let factor = SpdFactor::new(sigma)?;
    let n = y.len() as f64;
    let resid = DVector::from_fn(y.len(), |i, _| y[i] - beta[0] - beta[1] * x[i]);
    let quad = factor.whiten(&resid).norm_squared();
    let ml = -0.5 * (n * (2.0 * PI).ln() + factor.log_det() + quad);
    match criterion {
        Criterion::Ml => Ok(ml),
        Criterion::Reml => {
            let wd = factor.whiten_mat(&intercept_design(x));
            let info = wd.transpose() * wd;
            let det = info[(0, 0)] * info[(1, 1)] - info[(0, 1)] * info[(1, 0)];
            Ok(ml + (2.0 * PI).ln() - 0.5 * det.ln())
        }
    }
}

/// Search settings for [`mixed_fit`].
#[derive(Debug, Clone, Copy)]
pub struct MixedOptions {
    pub theta_bounds: (f64, f64),
    /// Starting `(θ_g, p_g)` pairs; one Nelder–Mead run each.
    pub starts: [(f64, f64); 3],
    pub optimizer: NelderMead,
}

impl Default for MixedOptions {
    fn default() -> Self {
        MixedOptions {
            theta_bounds: (0.01, 3.0),
            starts: [(0.05, 0.3), (0.3, 0.5), (1.2, 0.7)],
            optimizer: NelderMead {
                initial_step: 1.0,
                f_tol: 1e-9,
                x_tol: 1e-4,
                max_evals: 200,
            },
        }
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Profile (restricted) log-likelihood over the total variance, for the
/// correlation shape `Σ̃ = (1−p) I + p R(θ)`.
struct ProfileLikelihood<'a> {
    x: &'a DVector<f64>,
    y: &'a DVector<f64>,
    distances: DMatrix<f64>,
    nu: f64,
    criterion: Criterion,
}

struct ProfilePoint {
    loglik: f64,
    total_variance: f64,
    gls: GlsSolution,
}

impl ProfileLikelihood<'_> {
    fn shape(&self, theta: f64, p: f64) -> Result<DMatrix<f64>> {
        let n = self.y.len();
        if p == 0.0 {
            return Ok(DMatrix::identity(n, n));
        }
        let r = correlation_from_distances(&self.distances, &MaternSpec::new(theta, self.nu)?);
        let mut shape = r * p;
        for i in 0..n {
            shape[(i, i)] += 1.0 - p;
        }
        Ok(shape)
    }

    fn evaluate(&self, theta: f64, p: f64) -> Result<ProfilePoint> {
        let factor = SpdFactor::new(&self.shape(theta, p)?)?;
        let gls = gls_solve(self.x, self.y, &factor)?;
        let n = self.y.len() as f64;
        let log_det = factor.log_det();
        let (dof, extra) = match self.criterion {
            Criterion::Ml => (n, 0.0),
            Criterion::Reml => (n - 2.0, gls.log_det_info),
        };
        let total_variance = gls.quad_form / dof;
        let loglik = -0.5 * (dof * (2.0 * PI).ln() + dof * total_variance.ln() + log_det + extra + dof);
        Ok(ProfilePoint {
            loglik,
            total_variance,
            gls,
        })
    }
}

/// Maximum (restricted) likelihood fit of the mixed/kriging model with fixed
/// smoothness `nu_fit`.
///
/// The total variance `σ_g² + τ²` is profiled out in closed form; the
/// remaining search is over `(θ_g, p_g)` with `θ_g` mapped smoothly into
/// `theta_bounds` and `p_g = σ_g²/(σ_g² + τ²)` through a logistic transform.
/// The boundary `σ_g² = 0` (ordinary regression) is evaluated explicitly and
/// wins when its likelihood is at least as high.
pub fn mixed_fit(
    x: &DVector<f64>,
    y: &DVector<f64>,
    locs: &LocationSet,
    nu_fit: f64,
    criterion: Criterion,
    options: &MixedOptions,
) -> Result<FitResult> {
    check_lengths(x, y, 10)?;
    if locs.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: locs.len(),
        });
    }
    centered(x)?;
    MaternSpec::new(1.0, nu_fit)?;
    let (lo, hi) = options.theta_bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("bad range bounds ({lo}, {hi})")));
    }
    let profile = ProfileLikelihood {
        x,
        y,
        distances: locs.distance_matrix(),
        nu: nu_fit,
        criterion,
    };
    let to_natural = |u: &[f64]| (lo + (hi - lo) * logistic(u[0]), logistic(u[1]));
    let objective = |u: &[f64]| {
        let (theta, p) = to_natural(u);
        if p <= 0.0 || p >= 1.0 {
            return f64::INFINITY;
        }
        profile.evaluate(theta, p).map_or(f64::INFINITY, |pt| -pt.loglik)
    };

    let mut best: Option<(f64, (f64, f64), bool)> = None;
    for &(theta0, p0) in &options.starts {
        let t = ((theta0 - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
        let start = [logit(t), logit(p0)];
        let m = options.optimizer.minimize(objective, &start);
        if m.value.is_finite() && best.as_ref().is_none_or(|b| m.value < b.0) {
            best = Some((m.value, to_natural(&m.x), m.converged));
        }
    }
    let boundary = profile.evaluate(lo, 0.0)?;

    let (point, theta, p, converged, at_boundary) = match best {
        Some((value, (theta, p), conv)) if -value > boundary.loglik => {
            (profile.evaluate(theta, p)?, theta, p, conv, false)
        }
        Some((_, (theta, _), conv)) => (boundary, theta, 0.0, conv, true),
        None => (boundary, lo, 0.0, false, true),
    };
    let s2 = point.total_variance;
    Ok(FitResult {
        method: match criterion {
            Criterion::Ml => Method::Ml,
            Criterion::Reml => Method::Reml,
        },
        beta0: point.gls.beta[0],
        beta_x: point.gls.beta[1],
        se_beta_x: (s2 * point.gls.cov[(1, 1)]).max(0.0).sqrt(),
        variance_components: Some(VarianceComponents {
            sigma_g2: p * s2,
            tau2: (1.0 - p) * s2,
            theta_g: theta,
        }),
        edf: None,
        lambda: None,
        loglik: Some(point.loglik),
        converged,
        at_boundary,
    })
}

/// Log-likelihood of the mixed model at given variance components with `β`
/// profiled out by GLS.
pub fn mixed_log_likelihood(
    x: &DVector<f64>,
    y: &DVector<f64>,
    locs: &LocationSet,
    nu: f64,
    components: VarianceComponents,
    criterion: Criterion,
) -> Result<f64> {
    let sigma = mixed_covariance(locs, nu, components)?;
    let gls = gls_solve(x, y, &SpdFactor::new(&sigma)?)?;
    gaussian_log_likelihood(x, y, &sigma, gls.beta, criterion)
}

/// `σ_g² R(θ_g) + τ² I`.
pub fn mixed_covariance(locs: &LocationSet, nu: f64, c: VarianceComponents) -> Result<DMatrix<f64>> {
    let r = correlation_from_distances(&locs.distance_matrix(), &MaternSpec::new(c.theta_g, nu)?);
    let n = locs.len();
    Ok(r * c.sigma_g2 + DMatrix::identity(n, n) * c.tau2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_exact_line() {
        let x = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.5, -1.0]);
        let y = x.map(|v| 2.0 + 3.0 * v);
        let f = ols_fit(&x, &y).unwrap();
        assert!((f.beta0 - 2.0).abs() < 1e-12 && (f.beta_x - 3.0).abs() < 1e-12);
        assert!(f.se_beta_x < 1e-7);
    }

    #[test]
    fn ols_hand_case() {
        let x = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 3.0]);
        let f = ols_fit(&x, &y).unwrap();
        assert!((f.beta_x - 1.5).abs() < 1e-14);
        assert!((f.beta0 + 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn constant_exposure_is_singular() {
        let x = DVector::from_element(5, 2.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(ols_fit(&x, &y), Err(Error::SingularDesign(_))));
        assert!(matches!(
            ols_true_variance(&x, &DMatrix::identity(5, 5)),
            Err(Error::SingularDesign(_))
        ));
        assert!(gls_fit(&x, &y, &DMatrix::identity(5, 5)).is_err());
    }

    #[test]
    fn sandwich_collapses_for_scaled_identity() {
        let x = DVector::from_vec(vec![0.3, 1.2, -0.7, 2.2, 0.0, 1.1]);
        let (_, sxx) = centered(&x).unwrap();
        let v = ols_true_variance(&x, &(DMatrix::identity(6, 6) * 2.5)).unwrap();
        assert!((v - 2.5 / sxx).abs() < 1e-14);
        assert_eq!(ols_true_variance(&x, &DMatrix::zeros(6, 6)).unwrap(), 0.0);
    }

    #[test]
    fn gls_with_scaled_identity_matches_ols() {
        let x = DVector::from_vec(vec![0.3, 1.2, -0.7, 2.2, 0.0, 1.1]);
        let y = DVector::from_vec(vec![1.0, 0.2, -0.5, 3.0, 0.1, 0.9]);
        let ols = ols_fit(&x, &y).unwrap();
        let g1 = gls_fit(&x, &y, &DMatrix::identity(6, 6)).unwrap();
        let g3 = gls_fit(&x, &y, &(DMatrix::identity(6, 6) * 3.0)).unwrap();
        assert!((g1.beta_x - ols.beta_x).abs() < 1e-12 && (g1.beta0 - ols.beta0).abs() < 1e-12);
        assert!((g3.beta_x - ols.beta_x).abs() < 1e-12);
        assert!((g3.se_beta_x.powi(2) - 3.0 * g1.se_beta_x.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn reml_adds_information_determinant() {
        let x = DVector::from_vec(vec![0.1, 0.4, -0.3, 0.9, 1.4, -1.0, 0.2, 0.6]);
        let y = DVector::from_vec(vec![1.0, 0.7, 0.2, 1.9, 2.2, -0.4, 0.5, 1.1]);
        let a = DMatrix::from_fn(8, 8, |i, j| ((i + 2 * j) % 5) as f64 * 0.1);
        let sigma = &a * a.transpose() + DMatrix::identity(8, 8);
        let beta = [0.4, 0.9];
        let ml = gaussian_log_likelihood(&x, &y, &sigma, beta, Criterion::Ml).unwrap();
        let reml = gaussian_log_likelihood(&x, &y, &sigma, beta, Criterion::Reml).unwrap();
        let d = intercept_design(&x);
        let info = d.transpose() * sigma.clone().try_inverse().unwrap() * d;
        let expect = ml + (2.0 * PI).ln() - 0.5 * info.determinant().ln();
        assert!((reml - expect).abs() < 1e-10);
    }

    #[test]
    fn csv_record_has_header_width() {
        let f = FitResult::simple(Method::Ols, 1.0, 2.0, 0.1);
        assert_eq!(f.csv_record().len(), FitResult::CSV_HEADER.len());
        assert_eq!(f.csv_record()[4], "");
    }
}
