//! Location designs and Gaussian-process realizations.
//!
//! Sample variances use the divide-by-`n` convention throughout. Calibration
//! inflates a field's variance by `d²` so that its expected within-domain
//! sample variance equals the nominal variance; it is applied to every
//! Gaussian-process component (confounded and unconfounded exposure parts,
//! the confounder, and the optional extra residual field).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::covariance::{correlation_from_distances, correlation_matrix, MaternSpec};
use crate::linalg::SpdFactor;
use crate::rng::{stream, tag, StreamRng};
use crate::{Error, Result};

/// Planar locations, normally inside the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet {
    coords: Vec<[f64; 2]>,
}

impl LocationSet {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyDesign);
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("location coordinates must be finite".into()));
        }
        Ok(LocationSet { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Euclidean distance between locations `i` and `j` (flat square, no wrapping).
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let [xi, yi] = self.coords[i];
        let [xj, yj] = self.coords[j];
        (xi - xj).hypot(yi - yj)
    }

    pub fn distance_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.distance(i, j))
    }

    /// Writes `x,y` plus one column per named vector.
    pub fn write_csv<W: Write>(&self, out: W, columns: &[(&str, &DVector<f64>)]) -> Result<()> {
        for (name, v) in columns {
            if v.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    got: v.len(),
                });
            }
            if name.contains(',') {
                return Err(Error::InvalidParameter(format!(
                    "column name {name:?} contains a comma"
                )));
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend(columns.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header).map_err(csv_io)?;
        for (i, [x, y]) in self.coords.iter().enumerate() {
            let mut row = vec![x.to_string(), y.to_string()];
            row.extend(columns.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// How locations are placed on the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    Uniform,
    Grid,
    Cluster { mean_children: f64, kernel_sd: f64 },
}

impl Design {
    pub const DEFAULT_MEAN_CHILDREN: f64 = 7.0;
    pub const DEFAULT_KERNEL_SD: f64 = 0.03;

    pub fn cluster() -> Self {
        Design::Cluster {
            mean_children: Self::DEFAULT_MEAN_CHILDREN,
            kernel_sd: Self::DEFAULT_KERNEL_SD,
        }
    }

    /// True when every call returns the same locations.
    pub fn is_fixed(&self) -> bool {
        matches!(self, Design::Grid)
    }

    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<LocationSet> {
        match *self {
            Design::Uniform => uniform_with(n, rng),
            Design::Grid => sample_grid(n),
            Design::Cluster {
                mean_children,
                kernel_sd,
            } => cluster_with(n, mean_children, kernel_sd, rng).map(|(locs, _)| locs),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::Uniform => write!(f, "uniform"),
            Design::Grid => write!(f, "grid"),
            Design::Cluster {
                mean_children,
                kernel_sd,
            } => {
                write!(f, "cluster({mean_children},{kernel_sd})")
            }
        }
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(Design::Uniform),
            "grid" => Ok(Design::Grid),
            "cluster" => Ok(Design::cluster()),
            other => {
                let inner = other
                    .strip_prefix("cluster(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown design {other:?}")))?;
                let parts: Vec<&str> = inner.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::InvalidParameter(format!("unknown design {other:?}")));
                }
                let parse = |p: &str| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("unknown design {other:?}")))
                };
                Ok(Design::Cluster {
                    mean_children: parse(parts[0])?,
                    kernel_sd: parse(parts[1])?,
                })
            }
        }
    }
}

/// `n` i.i.d. uniform points on the unit square.
pub fn sample_uniform(n: usize, seed: u64) -> Result<LocationSet> {
    uniform_with(n, &mut stream(seed, &[tag::LOCATIONS]))
}

fn uniform_with(n: usize, rng: &mut StreamRng) -> Result<LocationSet> {
    if n == 0 {
        return Err(Error::EmptyDesign);
    }
    let coords = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    LocationSet::new(coords)
}

/// `√n × √n` lattice including the corners of the unit square.
pub fn sample_grid(n: usize) -> Result<LocationSet> {
    if n == 0 {
        return Err(Error::EmptyDesign);
    }
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::NotPerfectSquare(n));
    }
    if side == 1 {
        return LocationSet::new(vec![[0.5, 0.5]]);
    }
    let step = 1.0 / (side - 1) as f64;
    let coords = (0..side)
        .flat_map(|i| (0..side).map(move |j| [i as f64 * step, j as f64 * step]))
        .collect();
    LocationSet::new(coords)
}

/// Neyman–Scott cluster process: uniform parents, Poisson offspring counts,
/// isotropic Gaussian displacements clipped to the unit square.
pub fn sample_poisson_cluster(n: usize, mean_children: f64, kernel_sd: f64, seed: u64) -> Result<LocationSet> {
    cluster_with(n, mean_children, kernel_sd, &mut stream(seed, &[tag::LOCATIONS])).map(|(l, _)| l)
}

/// Cluster draw together with the parent index of every point.
pub(crate) fn cluster_with(
    n: usize,
    mean_children: f64,
    kernel_sd: f64,
    rng: &mut StreamRng,
) -> Result<(LocationSet, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDesign);
    }
    if !(mean_children > 0.0) || !(kernel_sd > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cluster design needs positive mean_children and kernel_sd, got {mean_children}, {kernel_sd}"
        )));
    }
    let counts = Poisson::new(mean_children).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let kernel = Normal::new(0.0, kernel_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut coords = Vec::with_capacity(n);
    let mut parents = Vec::with_capacity(n);
    let mut parent = 0;
    while coords.len() < n {
        let centre = [rng.random::<f64>(), rng.random::<f64>()];
        let k = counts.sample(rng) as usize;
        for _ in 0..k {
            let x = (centre[0] + kernel.sample(rng)).clamp(0.0, 1.0);
            let y = (centre[1] + kernel.sample(rng)).clamp(0.0, 1.0);
            coords.push([x, y]);
            parents.push(parent);
        }
        parent += 1;
    }
    coords.truncate(n);
    parents.truncate(n);
    Ok((LocationSet::new(coords)?, parents))
}

/// Divide-by-`n` sample variance.
pub fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.mean();
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Marginal law of one Gaussian-process component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    pub mean: f64,
    /// Nominal variance σ² before calibration.
    pub variance: f64,
    pub matern: MaternSpec,
    /// Calibration factor `d`; the field is drawn with variance `d² σ²`.
    pub calibration: Option<f64>,
}

impl FieldSpec {
    pub fn new(mean: f64, variance: f64, matern: MaternSpec) -> Self {
        FieldSpec {
            mean,
            variance,
            matern,
            calibration: None,
        }
    }

    pub fn calibrated(mut self, d: f64) -> Self {
        self.calibration = Some(d);
        self
    }

    /// Variance actually used in the draw.
    pub fn effective_variance(&self) -> f64 {
        self.variance * self.calibration.map_or(1.0, |d| d * d)
    }

    fn validate(&self) -> Result<()> {
        if !(self.variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "field variance must be ≥ 0, got {}",
                self.variance
            )));
        }
        if let Some(d) = self.calibration {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "calibration factor must be > 0, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// A field with its correlation factor precomputed for repeated draws.
#[derive(Debug, Clone)]
pub struct GaussianField {
    factor: SpdFactor,
    mean: f64,
    sd: f64,
}

impl GaussianField {
    pub fn new(locs: &LocationSet, spec: &FieldSpec) -> Result<Self> {
        spec.validate()?;
        let factor = correlation_matrix(locs, &spec.matern).factor()?;
        Ok(GaussianField {
            factor,
            mean: spec.mean,
            sd: spec.effective_variance().sqrt(),
        })
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// `mean + sd · L w` with `w` standard normal.
    pub fn draw(&self, rng: &mut StreamRng) -> DVector<f64> {
        let w = standard_normal_vector(self.factor.dim(), rng);
        self.draw_from_noise(&w)
    }

    pub fn draw_from_noise(&self, w: &DVector<f64>) -> DVector<f64> {
        if self.sd == 0.0 {
            return DVector::from_element(w.len(), self.mean);
        }
        self.factor.color(w).map(|v| self.mean + self.sd * v)
    }
}

pub fn standard_normal_vector(n: usize, rng: &mut StreamRng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// One realization of a Gaussian process at `locs`.
pub fn sample_gp(locs: &LocationSet, spec: &FieldSpec, seed: u64) -> Result<DVector<f64>> {
    let field = GaussianField::new(locs, spec)?;
    Ok(field.draw(&mut stream(seed, &[tag::FIELD])))
}

/// `E[1 − 1ᵀR1/n²]` for one location set: the expected divide-by-`n`
/// sample variance of a unit-variance, mean-zero field.
pub fn expected_variance_fraction(locs: &LocationSet, matern: &MaternSpec) -> f64 {
    let n = locs.len() as f64;
    let r = correlation_from_distances(&locs.distance_matrix(), matern);
    1.0 - r.sum() / (n * n)
}

/// Variance inflation `d` with `d² = 1 / E[1 − 1ᵀR1/n²]`, the expectation
/// averaged over `n_reps` draws from `design`.
pub fn calibration_factor(matern: &MaternSpec, n: usize, design: &Design, n_reps: usize, seed: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("calibration needs n ≥ 2, got {n}")));
    }
    let reps = if design.is_fixed() { 1 } else { n_reps.max(1) };
    let mut total = 0.0;
    for rep in 0..reps {
        let mut rng = stream(seed, &[tag::CALIBRATION, rep as u64]);
        let locs = design.sample(n, &mut rng)?;
        total += expected_variance_fraction(&locs, matern);
    }
    let fraction = total / reps as f64;
    if !(fraction > 1e-12) {
        return Err(Error::Calibration(format!(
            "expected sample variance fraction is {fraction:e}; the field is perfectly correlated over the domain"
        )));
    }
    Ok(fraction.recip().sqrt())
}

/// Calibration factors for the confounded (`c`), unconfounded (`u`) and
/// extra residual (`h`) fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFactors {
    pub d_c: f64,
    pub d_u: f64,
    pub d_h: f64,
}

impl CalibrationFactors {
    pub const NONE: CalibrationFactors = CalibrationFactors {
        d_c: 1.0,
        d_u: 1.0,
        d_h: 1.0,
    };

    /// Computes all three factors for `params` under `design`.
    pub fn compute(params: &ScenarioParams, n: usize, design: &Design, n_reps: usize, seed: u64) -> Result<Self> {
        let d_c = calibration_factor(&params.matern_c()?, n, design, n_reps, seed)?;
        let d_u = calibration_factor(&params.matern_u()?, n, design, n_reps, seed)?;
        let d_h = match params.residual_field {
            Some(h) => calibration_factor(&MaternSpec::new(h.theta_h, params.nu)?, n, design, n_reps, seed)?,
            None => 1.0,
        };
        Ok(CalibrationFactors { d_c, d_u, d_h })
    }
}

/// Extra residual field `h ~ GP(0, σ_h² R(θ_h))`, independent of everything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualField {
    pub sigma_h2: f64,
    pub theta_h: f64,
}

/// Full generative parameterization of the confounded-exposure scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    pub beta0: f64,
    pub beta_x: f64,
    pub beta_z: f64,
    pub sigma_c2: f64,
    pub sigma_u2: f64,
    pub sigma_z2: f64,
    pub tau2: f64,
    pub rho: f64,
    pub theta_c: f64,
    pub theta_u: f64,
    pub nu: f64,
    pub mu_x: f64,
    pub mu_z: f64,
    pub residual_field: Option<ResidualField>,
}

impl Default for ScenarioParams {
    /// Core simulation settings: σ_u² = σ_c² = β_z²σ_z² = 1, τ² = 4, β_x = 0.5, ρ = 0.3, ν = 2.
    fn default() -> Self {
        ScenarioParams {
            beta0: 0.0,
            beta_x: 0.5,
            beta_z: 1.0,
            sigma_c2: 1.0,
            sigma_u2: 1.0,
            sigma_z2: 1.0,
            tau2: 4.0,
            rho: 0.3,
            theta_c: 0.5,
            theta_u: 0.5,
            nu: 2.0,
            mu_x: 0.0,
            mu_z: 0.0,
            residual_field: None,
        }
    }
}

impl ScenarioParams {
    /// Parameters with the variance fractions `p_c`, `p_z` and unit totals.
    pub fn from_fractions(p_c: f64, p_z: f64, theta_c: f64, theta_u: f64) -> Self {
        ScenarioParams {
            beta_z: 1.0,
            sigma_c2: p_c,
            sigma_u2: 1.0 - p_c,
            sigma_z2: p_z,
            tau2: 1.0 - p_z,
            theta_c,
            theta_u,
            ..ScenarioParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("sigma_c2", self.sigma_c2),
            ("sigma_u2", self.sigma_u2),
            ("sigma_z2", self.sigma_z2),
            ("tau2", self.tau2),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        if !(self.theta_c > 0.0) || !(self.theta_u > 0.0) {
            return Err(Error::InvalidParameter("ranges must be positive".into()));
        }
        if let Some(h) = self.residual_field {
            if !(h.sigma_h2 >= 0.0) || !(h.theta_h > 0.0) {
                return Err(Error::InvalidParameter(
                    "residual field needs sigma_h2 ≥ 0 and theta_h > 0".into(),
                ));
            }
        }
        for v in [self.beta0, self.beta_x, self.beta_z, self.mu_x, self.mu_z] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("coefficients and means must be finite".into()));
            }
        }
        MaternSpec::new(self.theta_c, self.nu)?;
        Ok(())
    }

    /// Confounded share of exposure variance, `σ_c² / (σ_c² + σ_u²)`.
    pub fn p_c(&self) -> f64 {
        let total = self.sigma_c2 + self.sigma_u2;
        if total == 0.0 {
            0.0
        } else {
            self.sigma_c2 / total
        }
    }

    /// Confounder share of residual variance, `β_z²σ_z² / (β_z²σ_z² + τ²)`.
    pub fn p_z(&self) -> f64 {
        let signal = self.beta_z * self.beta_z * self.sigma_z2;
        let total = signal + self.tau2;
        if total == 0.0 {
            0.0
        } else {
            signal / total
        }
    }

    pub fn matern_c(&self) -> Result<MaternSpec> {
        MaternSpec::new(self.theta_c, self.nu)
    }

    pub fn matern_u(&self) -> Result<MaternSpec> {
        MaternSpec::new(self.theta_u, self.nu)
    }

    /// Bias of any of the estimators when exposure and confounder share one
    /// scale: `ρ (σ_z/σ_c) β_z`.
    pub fn same_scale_bias_multiplier(&self) -> f64 {
        self.rho * (self.sigma_z2 / self.sigma_c2).sqrt() * self.beta_z
    }
}

/// Exposure, confounder and the two exposure components of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedDraw {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub x_c: DVector<f64>,
    pub x_u: DVector<f64>,
}

/// Correlation factors for one location set, reusable across replicates.
#[derive(Debug, Clone)]
pub struct ScenarioFields {
    params: ScenarioParams,
    calibration: CalibrationFactors,
    factor_c: SpdFactor,
    factor_u: SpdFactor,
    factor_h: Option<SpdFactor>,
}

impl ScenarioFields {
    pub fn new(locs: &LocationSet, params: &ScenarioParams, calibration: CalibrationFactors) -> Result<Self> {
        params.validate()?;
        let distances = locs.distance_matrix();
        let factor_c = SpdFactor::new(&correlation_from_distances(&distances, &params.matern_c()?))?;
        let factor_u = if params.theta_u == params.theta_c {
            factor_c.clone()
        } else {
            SpdFactor::new(&correlation_from_distances(&distances, &params.matern_u()?))?
        };
        let factor_h = match params.residual_field {
            Some(h) if h.theta_h == params.theta_u => Some(factor_u.clone()),
            Some(h) => Some(SpdFactor::new(&correlation_from_distances(
                &distances,
                &MaternSpec::new(h.theta_h, params.nu)?,
            ))?),
            None => None,
        };
        Ok(ScenarioFields {
            params: *params,
            calibration,
            factor_c,
            factor_u,
            factor_h,
        })
    }

    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }

    pub fn calibration(&self) -> CalibrationFactors {
        self.calibration
    }

    pub fn factor_c(&self) -> &SpdFactor {
        &self.factor_c
    }

    pub fn factor_u(&self) -> &SpdFactor {
        &self.factor_u
    }

    pub fn factor_h(&self) -> Option<&SpdFactor> {
        self.factor_h.as_ref()
    }

    /// Draws `(X, Z)` with `Cov(X_c, Z) = ρ σ_c σ_z d_c² R(θ_c)`.
    pub fn sample_confounded_pair(&self, rng: &mut StreamRng) -> ConfoundedDraw {
        let p = &self.params;
        let n = self.factor_c.dim();
        let w_c = standard_normal_vector(n, rng);
        let w_u = standard_normal_vector(n, rng);
        let w_z = standard_normal_vector(n, rng);
        let d = &self.calibration;
        let x_c = self.factor_c.color(&w_c) * (d.d_c * p.sigma_c2.sqrt());
        let x_u = self.factor_u.color(&w_u) * (d.d_u * p.sigma_u2.sqrt());
        let mix = &w_c * p.rho + &w_z * (1.0 - p.rho * p.rho).max(0.0).sqrt();
        let z = self.factor_c.color(&mix) * (d.d_c * p.sigma_z2.sqrt());
        let x = (&x_c + &x_u).add_scalar(p.mu_x);
        let z = z.add_scalar(p.mu_z);
        ConfoundedDraw { x, z, x_c, x_u }
    }

    /// `Y = β_0 + β_x X + β_z Z + ε` (+ `h` when `multiscale`).
    pub fn sample_outcome(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        multiscale: bool,
        rng: &mut StreamRng,
    ) -> Result<DVector<f64>> {
        outcome_with(&self.params, x, z, self.residual_draw(multiscale, rng)?, rng)
    }

    fn residual_draw(&self, multiscale: bool, rng: &mut StreamRng) -> Result<Option<DVector<f64>>> {
        if !multiscale {
            return Ok(None);
        }
        let (h, factor) = match (self.params.residual_field, &self.factor_h) {
            (Some(h), Some(f)) => (h, f),
            _ => {
                return Err(Error::InvalidParameter(
                    "multiscale outcome requested without a residual field".into(),
                ))
            }
        };
        let w = standard_normal_vector(factor.dim(), rng);
        Ok(Some(factor.color(&w) * (self.calibration.d_h * h.sigma_h2.sqrt())))
    }
}

fn outcome_with(
    params: &ScenarioParams,
    x: &DVector<f64>,
    z: &DVector<f64>,
    h: Option<DVector<f64>>,
    rng: &mut StreamRng,
) -> Result<DVector<f64>> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
        });
    }
    let tau = params.tau2.sqrt();
    let mut y = DVector::from_fn(x.len(), |i, _| {
        let eps: f64 = StandardNormal.sample(rng);
        params.beta0 + params.beta_x * x[i] + params.beta_z * z[i] + tau * eps
    });
    if let Some(h) = h {
        if h.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: h.len(),
            });
        }
        y += h;
    }
    Ok(y)
}

/// Seeded draw of the confounded exposure and confounder at `locs`.
pub fn sample_confounded_pair(
    locs: &LocationSet,
    params: &ScenarioParams,
    calibration: CalibrationFactors,
    seed: u64,
) -> Result<ConfoundedDraw> {
    let fields = ScenarioFields::new(locs, params, calibration)?;
    Ok(fields.sample_confounded_pair(&mut stream(seed, &[tag::EXPOSURE])))
}

/// Seeded outcome draw. `locs` and `calibration` are only used for the
/// multiscale residual field.
pub fn sample_outcome(
    locs: &LocationSet,
    x: &DVector<f64>,
    z: &DVector<f64>,
    params: &ScenarioParams,
    calibration: CalibrationFactors,
    seed: u64,
    multiscale: bool,
) -> Result<DVector<f64>> {
    if x.len() != locs.len() {
        return Err(Error::DimensionMismatch {
            expected: locs.len(),
            got: x.len(),
        });
    }
    let mut rng = stream(seed, &[tag::OUTCOME]);
    if !multiscale {
        return outcome_with(params, x, z, None, &mut rng);
    }
    let fields = ScenarioFields::new(locs, params, calibration)?;
    fields.sample_outcome(x, z, true, &mut rng)
}
