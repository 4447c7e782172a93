//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 numerical failure,
//! 4 I/O failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::covariance::{matern, MaternSpec};
use crate::estimators::{mixed_fit, ols_fit, Criterion, FitResult, MixedOptions};
use crate::experiments::{fit_grid::Z_95, run_to_dir, ExperimentId, ExperimentSpec};
use crate::fields::{calibration_factor, Design, LocationSet};
use crate::splines::{build_tps_basis, partial_spline_fit, regression_spline_fit, SmoothControl};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "spconf",
    version,
    about = "Spatial confounding simulations and spatial regression fits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation experiment and write <experiment>.csv and <experiment>.manifest.
    Run(RunArgs),
    /// Fit one data set (CSV with columns x, y, X, Y).
    Fit(FitArgs),
    /// Print the variance calibration factor for a Matérn field.
    Calibrate(CalibrateArgs),
    /// Print Matérn correlations over a distance grid.
    MaternTable(MaternArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// bias-grid, fit-grid, mse-grid, edf-grid or precision-grid; may instead
    /// come from the config file's `experiment` key.
    pub experiment: Option<String>,
    /// Master seed (required here or in the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value settings file; `#` starts a comment. Manifests are valid configs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. --set n_sims=50. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Replicate-count multiplier applied to the desk-scale defaults.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Use the full replicate counts (1000 for bias-grid, 2000 for fit grids, 500 for precision-grid).
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with header columns x, y (coordinates), X (exposure), Y (outcome).
    #[arg(long)]
    pub input: PathBuf,
    /// ols, ml, reml, gcv, edf (penalized spline at --edf) or regspline (at --edf).
    #[arg(long, default_value = "ols")]
    pub method: String,
    /// Total e.d.f. target, counting the intercept and exposure columns.
    #[arg(long)]
    pub edf: Option<f64>,
    /// Comma-separated e.d.f. ladder for the edf and regspline methods; one row per value.
    #[arg(long)]
    pub ladder: Option<String>,
    /// Spline basis dimension for gcv and edf (default min(60, n - 3)).
    #[arg(long)]
    pub k: Option<usize>,
    /// Matérn smoothness for ml and reml.
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    /// Output file (default stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub theta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// grid, uniform, cluster or cluster(mean_children,kernel_sd).
    #[arg(long, default_value = "grid")]
    pub design: String,
    /// Location draws for random designs.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Required for random designs.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MaternArgs {
    #[arg(long)]
    pub theta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 1.5)]
    pub max_d: f64,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(err, Error::Io(_)) {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => cmd_run(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::MaternTable(args) => cmd_matern_table(&args),
    }
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_settings(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i as u64 + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: i as u64 + 1,
                msg: "empty key".into(),
            });
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Merges file settings, `--set` overrides and flags (flags win) into a spec.
pub fn resolve_run(args: &RunArgs) -> Result<ExperimentSpec> {
    let mut settings = match &args.config {
        Some(path) => parse_settings(&read_file(path)?)?,
        None => BTreeMap::new(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got {o:?}")))?;
        settings.insert(k.trim().to_string(), v.trim().to_string());
    }
    let from_file = settings.remove("experiment");
    let name = match (&args.experiment, from_file) {
        (Some(a), Some(b)) if *a != b => {
            return Err(Error::InvalidParameter(format!(
                "experiment {a:?} conflicts with config experiment {b:?}"
            )))
        }
        (Some(a), _) => a.clone(),
        (None, Some(b)) => b,
        (None, None) => return Err(Error::InvalidParameter("no experiment given".into())),
    };
    let id: ExperimentId = name.parse()?;
    if let Some(seed) = args.seed {
        settings.insert("seed".into(), seed.to_string());
    }
    if let Some(scale) = args.scale {
        settings.insert("scale".into(), scale.to_string());
    }
    if args.full {
        settings.insert("full".into(), "true".into());
    }
    if args.jobs == 0 {
        return Err(Error::InvalidParameter("--jobs must be at least 1".into()));
    }
    ExperimentSpec::from_settings(id, &settings)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let spec = resolve_run(args)?;
    let (result, files) = run_to_dir(&spec, args.jobs, &args.out)?;
    eprintln!(
        "{}: {} rows -> {} (excluded {} of {} replicate fits)",
        spec.id,
        result.rows.len(),
        files.csv.display(),
        result.replicates_excluded,
        result.replicates_attempted
    );
    Ok(())
}

/// Data read by the `fit` command.
#[derive(Debug, Clone)]
pub struct FitData {
    pub locs: LocationSet,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

/// Parses a CSV with header columns `x`, `y`, `X`, `Y` (any order, extra
/// columns ignored). Errors name the 1-based file line.
pub fn read_fit_data<R: io::Read>(input: R) -> Result<FitData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    };
    let idx = [col("x")?, col("y")?, col("X")?, col("Y")?];
    let (mut coords, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let mut v = [0.0; 4];
        for (slot, &j) in v.iter_mut().zip(&idx) {
            let field = record.get(j).unwrap_or("");
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("{:?} is not a finite number", field),
                })?;
        }
        coords.push([v[0], v[1]]);
        xs.push(v[2]);
        ys.push(v[3]);
    }
    if coords.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    Ok(FitData {
        locs: LocationSet::new(coords)?,
        x: DVector::from_vec(xs),
        y: DVector::from_vec(ys),
    })
}

fn parse_ladder(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad e.d.f. value {v:?}")))
        })
        .collect()
}

/// Fits `data` with `method`; ladder mode returns one fit per e.d.f. value.
pub fn fit_data(data: &FitData, args: &FitArgs) -> Result<Vec<FitResult>> {
    let n = data.x.len();
    let method = args.method.to_ascii_lowercase();
    let needs_n10 = method != "ols";
    if needs_n10 && n < 10 {
        return Err(Error::InvalidParameter(format!(
            "method {method} needs at least 10 observations, got {n}"
        )));
    }
    let k = args.k.unwrap_or(60.min(n.saturating_sub(3)));
    let edfs: Vec<f64> = match (&args.ladder, args.edf) {
        (Some(l), _) => parse_ladder(l)?,
        (None, Some(e)) => vec![e],
        (None, None) => Vec::new(),
    };
    let need_edf = || {
        if edfs.is_empty() {
            Err(Error::InvalidParameter(format!(
                "method {method} needs --edf or --ladder"
            )))
        } else {
            Ok(())
        }
    };
    match method.as_str() {
        "ols" => Ok(vec![ols_fit(&data.x, &data.y)?]),
        "ml" | "reml" => {
            let criterion: Criterion = method.parse()?;
            Ok(vec![mixed_fit(
                &data.x,
                &data.y,
                &data.locs,
                args.nu,
                criterion,
                &MixedOptions::default(),
            )?])
        }
        "gcv" => {
            let basis = build_tps_basis(&data.locs, k)?;
            Ok(vec![partial_spline_fit(&data.x, &data.y, &basis, SmoothControl::Gcv)?])
        }
        "edf" => {
            need_edf()?;
            let basis = build_tps_basis(&data.locs, k)?;
            edfs.iter()
                .map(|&e| partial_spline_fit(&data.x, &data.y, &basis, SmoothControl::FixedEdf(e)))
                .collect()
        }
        "regspline" => {
            need_edf()?;
            edfs.iter()
                .map(|&e| {
                    if e.fract() != 0.0 || e < 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "regression spline e.d.f. must be an integer, got {e}"
                        )));
                    }
                    regression_spline_fit(&data.x, &data.y, &data.locs, e as usize)
                })
                .collect()
        }
        other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
    }
}

/// FitResult columns followed by the normal 95% interval.
pub fn write_fits<W: Write>(out: W, fits: &[FitResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Io(io::Error::other(e));
    let mut header: Vec<&str> = FitResult::CSV_HEADER.to_vec();
    header.extend(["ci_lower", "ci_upper"]);
    w.write_record(&header).map_err(io_err)?;
    for f in fits {
        let mut row = f.csv_record();
        row.push((f.beta_x - Z_95 * f.se_beta_x).to_string());
        row.push((f.beta_x + Z_95 * f.se_beta_x).to_string());
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let file = fs::File::open(&args.input)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", args.input.display()))))?;
    let data = read_fit_data(file)?;
    let fits = fit_data(&data, args)?;
    match &args.output {
        Some(path) => write_fits(fs::File::create(path)?, &fits),
        None => write_fits(io::stdout().lock(), &fits),
    }
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let design: Design = args.design.parse()?;
    let seed = match (args.seed, design.is_fixed()) {
        (Some(s), _) => s,
        (None, true) => 0,
        (None, false) => return Err(Error::InvalidParameter("--seed is required for random designs".into())),
    };
    let d = calibration_factor(&MaternSpec::new(args.theta, args.nu)?, args.n, &design, args.reps, seed)?;
    let mut out = io::stdout().lock();
    writeln!(out, "theta,nu,n,design,d")?;
    writeln!(out, "{},{},{},\"{}\",{}", args.theta, args.nu, args.n, design, d)?;
    Ok(())
}

fn cmd_matern_table(args: &MaternArgs) -> Result<()> {
    let spec = MaternSpec::new(args.theta, args.nu)?;
    if args.steps == 0 || !(args.max_d > 0.0) {
        return Err(Error::InvalidParameter("need --steps ≥ 1 and --max-d > 0".into()));
    }
    let mut out = io::stdout().lock();
    writeln!(out, "d,correlation")?;
    for i in 0..=args.steps {
        let d = args.max_d * i as f64 / args.steps as f64;
        writeln!(out, "{},{}", d, matern(d, &spec)?)?;
    }
    Ok(())
}
