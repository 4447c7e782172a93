//! Simulation drivers: configuration, seeded execution and CSV/manifest output.
//!
//! A run is described by flat `key=value` settings. Every key has a default
//! except `seed`; the resolved settings are written back into the manifest,
//! which is itself a valid configuration file for rerunning.

pub mod fit_grid;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::bias::{expected_k_grid, BiasCell, BiasGridConfig};
use crate::fields::{Design, ResidualField, ScenarioParams};
use crate::precision::{precision_grid, PrecisionCell, PrecisionScenario};
use crate::{Error, Result};

pub use fit_grid::{FitGridSpec, FitMethod, FitSummary};

/// Default range grid for both axes.
pub const DEFAULT_THETAS: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    BiasGrid,
    EstimatedFitGrid,
    MseCoverageGrid,
    FixedEdfGrid,
    PrecisionGrid,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::BiasGrid,
        ExperimentId::EstimatedFitGrid,
        ExperimentId::MseCoverageGrid,
        ExperimentId::FixedEdfGrid,
        ExperimentId::PrecisionGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::BiasGrid => "bias-grid",
            ExperimentId::EstimatedFitGrid => "fit-grid",
            ExperimentId::MseCoverageGrid => "mse-grid",
            ExperimentId::FixedEdfGrid => "edf-grid",
            ExperimentId::PrecisionGrid => "precision-grid",
        }
    }

    /// Replicates per cell at desk scale and with `full=true`.
    fn replicate_counts(self) -> (usize, usize) {
        match self {
            ExperimentId::BiasGrid => (200, 1000),
            ExperimentId::PrecisionGrid => (50, 500),
            _ => (200, 2000),
        }
    }

    fn default_design(self) -> Design {
        match self {
            ExperimentId::BiasGrid => Design::Grid,
            _ => Design::Uniform,
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            ExperimentId::BiasGrid => &["theta_c", "theta_u", "p_c", "p_z", "residual_field_share"],
            ExperimentId::PrecisionGrid => &["theta_x", "theta_g", "p_g"],
            _ => &[
                "theta_c", "theta_u", "beta0", "beta_x", "beta_z", "sigma_c2", "sigma_u2", "sigma_z2", "tau2", "rho",
                "mu_x", "mu_z", "sigma_h2", "theta_h", "nu_fit", "spline_k", "methods",
            ],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment {s:?}")))
    }
}

const COMMON_KEYS: [&str; 9] = [
    "seed",
    "n",
    "n_sims",
    "scale",
    "full",
    "design",
    "calibrate",
    "calibration_reps",
    "nu",
];

/// Resolved settings of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub seed: u64,
    pub n: usize,
    pub n_sims: usize,
    pub design: Design,
    pub calibrate: bool,
    pub calibration_reps: usize,
    pub nu: f64,
    /// `θ_c` (or `θ_x` for the precision grid).
    pub grid_a: Vec<f64>,
    /// `θ_u` (or `θ_g`).
    pub grid_b: Vec<f64>,
    pub p_c: Vec<f64>,
    pub p_z: Vec<f64>,
    pub p_g: Vec<f64>,
    pub residual_field_share: Option<f64>,
    pub params: ScenarioParams,
    pub theta_h: Option<f64>,
    pub nu_fit: f64,
    pub spline_k: usize,
    pub methods: Vec<FitMethod>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("cannot parse {key}={value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value.split(',').map(|v| parse_value(key, v)).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidParameter(format!("{key} must be non-empty")));
    }
    Ok(items)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentSpec {
    /// Builds a spec from `key=value` settings; unknown keys and a missing
    /// seed are errors.
    pub fn from_settings(id: ExperimentId, settings: &BTreeMap<String, String>) -> Result<Self> {
        for key in settings.keys() {
            if !COMMON_KEYS.contains(&key.as_str()) && !id.keys().contains(&key.as_str()) {
                return Err(Error::InvalidParameter(format!("unknown setting {key:?} for {id}")));
            }
        }
        let get = |k: &str| settings.get(k).map(String::as_str);
        let seed = get("seed")
            .ok_or_else(|| Error::InvalidParameter("a seed is required".into()))
            .and_then(|v| parse_value::<u64>("seed", v))?;

        let (desk, full_count) = id.replicate_counts();
        let full = get("full")
            .map(|v| parse_value::<bool>("full", v))
            .transpose()?
            .unwrap_or(false);
        let scale = get("scale")
            .map(|v| parse_value::<f64>("scale", v))
            .transpose()?
            .unwrap_or(1.0);
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale must be a finite number ≥ 0, got {scale}"
            )));
        }
        let n_sims = match get("n_sims") {
            Some(v) => parse_value::<usize>("n_sims", v)?,
            None => (((if full { full_count } else { desk }) as f64 * scale).round() as usize).max(2),
        };
        if n_sims < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_sims must be at least 2, got {n_sims}"
            )));
        }

        let defaults = ScenarioParams::default();
        let num = |k: &str, d: f64| {
            get(k)
                .map(|v| parse_value::<f64>(k, v))
                .transpose()
                .map(|o| o.unwrap_or(d))
        };
        let list = |k: &str, d: &[f64]| {
            get(k)
                .map(|v| parse_list::<f64>(k, v))
                .transpose()
                .map(|o| o.unwrap_or(d.to_vec()))
        };
        let (a_key, b_key) = match id {
            ExperimentId::PrecisionGrid => ("theta_x", "theta_g"),
            _ => ("theta_c", "theta_u"),
        };
        let nu = num("nu", 2.0)?;
        let sigma_h2 = num("sigma_h2", 0.0)?;
        let theta_h = match get("theta_h") {
            None | Some("theta_u") => None,
            Some(v) => Some(parse_value::<f64>("theta_h", v)?),
        };
        let params = ScenarioParams {
            beta0: num("beta0", defaults.beta0)?,
            beta_x: num("beta_x", defaults.beta_x)?,
            beta_z: num("beta_z", defaults.beta_z)?,
            sigma_c2: num("sigma_c2", defaults.sigma_c2)?,
            sigma_u2: num("sigma_u2", defaults.sigma_u2)?,
            sigma_z2: num("sigma_z2", defaults.sigma_z2)?,
            tau2: num("tau2", defaults.tau2)?,
            rho: num("rho", defaults.rho)?,
            mu_x: num("mu_x", defaults.mu_x)?,
            mu_z: num("mu_z", defaults.mu_z)?,
            nu,
            residual_field: (sigma_h2 > 0.0).then_some(ResidualField {
                sigma_h2,
                theta_h: theta_h.unwrap_or(1.0),
            }),
            ..defaults
        };
        params.validate()?;
        let default_methods: Vec<FitMethod> = match id {
            ExperimentId::EstimatedFitGrid => {
                vec![
                    FitMethod::Theory,
                    FitMethod::Ols,
                    FitMethod::Gls,
                    FitMethod::Ml,
                    FitMethod::Gcv,
                ]
            }
            ExperimentId::MseCoverageGrid => vec![FitMethod::Ml, FitMethod::Gcv],
            _ => [5, 15, 30]
                .into_iter()
                .flat_map(|e| [FitMethod::RegSpline(e), FitMethod::PenSpline(e)])
                .collect(),
        };
        let residual_field_share = match get("residual_field_share") {
            None | Some("none") => None,
            Some(v) => {
                let s = parse_value::<f64>("residual_field_share", v)?;
                if !(0.0..1.0).contains(&s) {
                    return Err(Error::InvalidParameter(format!(
                        "residual_field_share must lie in [0, 1), got {s}"
                    )));
                }
                Some(s)
            }
        };
        let spec = ExperimentSpec {
            id,
            seed,
            n: get("n").map(|v| parse_value("n", v)).transpose()?.unwrap_or(100),
            n_sims,
            design: get("design")
                .map(|v| parse_value("design", v))
                .transpose()?
                .unwrap_or(id.default_design()),
            calibrate: get("calibrate")
                .map(|v| parse_value("calibrate", v))
                .transpose()?
                .unwrap_or(true),
            calibration_reps: get("calibration_reps")
                .map(|v| parse_value("calibration_reps", v))
                .transpose()?
                .unwrap_or(20),
            nu,
            grid_a: list(a_key, &DEFAULT_THETAS)?,
            grid_b: list(b_key, &DEFAULT_THETAS)?,
            p_c: list("p_c", &[0.1, 0.5, 0.9])?,
            p_z: list("p_z", &[0.1, 0.5, 0.9])?,
            p_g: list("p_g", &[0.1, 0.5, 0.9])?,
            residual_field_share,
            params,
            theta_h,
            nu_fit: num("nu_fit", nu)?,
            spline_k: get("spline_k")
                .map(|v| parse_value("spline_k", v))
                .transpose()?
                .unwrap_or(60),
            methods: get("methods")
                .map(|v| parse_list("methods", v))
                .transpose()?
                .unwrap_or(default_methods),
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidParameter(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        let ranges = self.grid_a.iter().chain(&self.grid_b);
        if ranges.clone().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("ranges must be positive".into()));
        }
        let fractions = self.p_c.iter().chain(&self.p_z).chain(&self.p_g);
        if fractions.clone().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter("variance fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Resolved settings, in the order written to the manifest.
    pub fn settings(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("n", self.n.to_string()),
            ("n_sims", self.n_sims.to_string()),
            ("design", self.design.to_string()),
            ("calibrate", self.calibrate.to_string()),
            ("calibration_reps", self.calibration_reps.to_string()),
            ("nu", self.nu.to_string()),
        ];
        match self.id {
            ExperimentId::BiasGrid => {
                out.push(("theta_c", join(&self.grid_a)));
                out.push(("theta_u", join(&self.grid_b)));
                out.push(("p_c", join(&self.p_c)));
                out.push(("p_z", join(&self.p_z)));
                out.push((
                    "residual_field_share",
                    self.residual_field_share.map_or("none".into(), |s| s.to_string()),
                ));
            }
            ExperimentId::PrecisionGrid => {
                out.push(("theta_x", join(&self.grid_a)));
                out.push(("theta_g", join(&self.grid_b)));
                out.push(("p_g", join(&self.p_g)));
            }
            _ => {
                let p = &self.params;
                out.push(("theta_c", join(&self.grid_a)));
                out.push(("theta_u", join(&self.grid_b)));
                for (k, v) in [
                    ("beta0", p.beta0),
                    ("beta_x", p.beta_x),
                    ("beta_z", p.beta_z),
                    ("sigma_c2", p.sigma_c2),
                    ("sigma_u2", p.sigma_u2),
                    ("sigma_z2", p.sigma_z2),
                    ("tau2", p.tau2),
                    ("rho", p.rho),
                    ("mu_x", p.mu_x),
                    ("mu_z", p.mu_z),
                    ("sigma_h2", p.residual_field.map_or(0.0, |h| h.sigma_h2)),
                ] {
                    out.push((k, v.to_string()));
                }
                out.push(("theta_h", self.theta_h.map_or("theta_u".into(), |t| t.to_string())));
                out.push(("nu_fit", self.nu_fit.to_string()));
                out.push(("spline_k", self.spline_k.to_string()));
                out.push(("methods", join(&self.methods)));
            }
        }
        out
    }

    pub fn fit_grid_spec(&self) -> FitGridSpec {
        FitGridSpec {
            theta_c: self.grid_a.clone(),
            theta_u: self.grid_b.clone(),
            params: self.params,
            theta_h: self.theta_h,
            n: self.n,
            n_sims: self.n_sims,
            design: self.design,
            calibrate: self.calibrate,
            calibration_reps: self.calibration_reps,
            nu_fit: self.nu_fit,
            spline_k: self.spline_k,
            methods: self.methods.clone(),
            seed: self.seed,
        }
    }

    pub fn bias_grid_config(&self, p_c: f64, p_z: f64) -> BiasGridConfig {
        BiasGridConfig {
            theta_c: self.grid_a.clone(),
            theta_u: self.grid_b.clone(),
            p_c,
            p_z,
            n: self.n,
            design: self.design,
            n_sims: self.n_sims,
            seed: self.seed,
            nu: self.nu,
            calibrate: self.calibrate,
            calibration_reps: self.calibration_reps,
            residual_field_share: self.residual_field_share,
        }
    }

    pub fn precision_scenarios(&self) -> Vec<PrecisionScenario> {
        let mut out = Vec::new();
        for &p_g in &self.p_g {
            for &theta_x in &self.grid_a {
                for &theta_g in &self.grid_b {
                    out.push(PrecisionScenario {
                        theta_x,
                        theta_g,
                        p_g,
                        nu: self.nu,
                        n: self.n,
                        design: self.design,
                        calibrate: self.calibrate,
                        calibration_reps: self.calibration_reps,
                    });
                }
            }
        }
        out
    }
}

/// Tabular result of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub replicates_attempted: usize,
    pub replicates_excluded: usize,
}

impl GridResult {
    pub fn exclusion_rate(&self) -> f64 {
        if self.replicates_attempted == 0 {
            0.0
        } else {
            self.replicates_excluded as f64 / self.replicates_attempted as f64
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn run_bias_grid(spec: &ExperimentSpec) -> Result<GridResult> {
    let mut rows = Vec::new();
    for &p_c in &spec.p_c {
        for &p_z in &spec.p_z {
            let cells: Vec<BiasCell> = expected_k_grid(&spec.bias_grid_config(p_c, p_z))?;
            rows.extend(cells.iter().map(BiasCell::csv_record));
        }
    }
    let attempted = rows.len() * spec.n_sims;
    Ok(GridResult {
        header: header(&BiasCell::CSV_HEADER),
        rows,
        replicates_attempted: attempted,
        replicates_excluded: 0,
    })
}

/// Shared driver for the three fit grids.
pub fn run_fit_grid(spec: &ExperimentSpec) -> Result<GridResult> {
    let cells = fit_grid::simulate_fit_grid(&spec.fit_grid_spec())?;
    let mut rows = Vec::new();
    let (mut attempted, mut excluded) = (0, 0);
    for cell in &cells {
        for s in fit_grid::summarize_cell(cell, spec.params.beta_x) {
            attempted += s.n_used + s.n_excluded;
            excluded += s.n_excluded;
            rows.push(s.csv_record(cell.calibration));
        }
    }
    Ok(GridResult {
        header: header(&FitSummary::CSV_HEADER),
        rows,
        replicates_attempted: attempted,
        replicates_excluded: excluded,
    })
}

pub fn run_precision_grid(spec: &ExperimentSpec) -> Result<GridResult> {
    let cells: Vec<PrecisionCell> = precision_grid(&spec.precision_scenarios(), spec.n_sims, spec.seed)?;
    let rows: Vec<Vec<String>> = cells.iter().flat_map(PrecisionCell::csv_records).collect();
    Ok(GridResult {
        header: header(&PrecisionCell::CSV_HEADER),
        rows,
        replicates_attempted: cells.len() * spec.n_sims,
        replicates_excluded: 0,
    })
}

/// Runs `spec` on a pool of `jobs` worker threads.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<GridResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match spec.id {
        ExperimentId::BiasGrid => run_bias_grid(spec),
        ExperimentId::PrecisionGrid => run_precision_grid(spec),
        _ => run_fit_grid(spec),
    })
}

/// Paths written by [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// Runs and writes `<id>.csv` and `<id>.manifest` into `dir`.
pub fn run_to_dir(spec: &ExperimentSpec, jobs: usize, dir: &Path) -> Result<(GridResult, RunFiles)> {
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    let result = run_experiment(spec, jobs)?;
    let wall = start.elapsed().as_secs_f64();
    let csv = dir.join(format!("{}.csv", spec.id));
    result.write_csv(fs::File::create(&csv)?)?;
    let manifest = dir.join(format!("{}.manifest", spec.id));
    write_manifest(&mut fs::File::create(&manifest)?, spec, &result, jobs, wall)?;
    Ok((result, RunFiles { csv, manifest }))
}

/// The manifest is a configuration file: `experiment` and every resolved
/// setting, followed by run facts as `#` comments.
pub fn write_manifest<W: Write>(
    out: &mut W,
    spec: &ExperimentSpec,
    result: &GridResult,
    jobs: usize,
    wall: f64,
) -> Result<()> {
    writeln!(out, "experiment={}", spec.id)?;
    for (k, v) in spec.settings() {
        writeln!(out, "{k}={v}")?;
    }
    writeln!(out, "# version={}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# jobs={jobs}")?;
    writeln!(out, "# wall_time_s={wall:.3}")?;
    writeln!(out, "# rows={}", result.rows.len())?;
    writeln!(out, "# replicates_attempted={}", result.replicates_attempted)?;
    writeln!(out, "# replicates_excluded={}", result.replicates_excluded)?;
    writeln!(out, "# exclusion_rate={}", result.exclusion_rate())?;
    Ok(())
}
