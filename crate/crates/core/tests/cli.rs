//! End-to-end checks of the `spconf` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spconf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_fit_input(path: &Path, noise: bool) {
    let mut s = String::from("x,y,X,Y\n");
    for i in 0..25 {
        let (a, b) = ((i % 5) as f64 / 4.0, (i / 5) as f64 / 4.0);
        let x = (3.0 * a).sin() + b * b - 0.3 * i as f64 / 25.0;
        let e = if noise {
            0.1 * ((i * 7919) % 13) as f64 / 13.0
        } else {
            0.0
        };
        s.push_str(&format!("{a},{b},{x},{}\n", 1.0 + 2.0 * x + e));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn default_bias_grid_has_441_rows_and_manifest_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let status = spconf(&[
        "run",
        "bias-grid",
        "--seed",
        "3",
        "--scale",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = fs::read_to_string(out.join("bias-grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 442);
    assert!(csv.starts_with("theta_c,theta_u,p_c,p_z,mean_k,se_k,n_sims"));

    let manifest = out.join("bias-grid.manifest");
    let again = dir.path().join("b");
    let status = spconf(&[
        "run",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(csv, fs::read_to_string(again.join("bias-grid.csv")).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        spconf(&["run", "bias-grid", "--seed", "1", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(spconf(&["run", "bias-grid"]).status.code(), Some(2));
    assert_eq!(spconf(&["run", "no-such-grid", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(
        spconf(&["run", "bias-grid", "--seed", "1", "--set", "p_c=2"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        spconf(&["run", "bias-grid", "--seed", "1", "--set", "colour=red"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(spconf(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "experiment = bias-grid\n# comment\nseed 4\n").unwrap();
    let out = spconf(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let missing = spconf(&["run", "--config", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn noiseless_fit_recovers_slope() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_fit_input(&input, false);
    for method in ["ols", "gcv", "ml"] {
        let out = spconf(&["fit", "--input", input.to_str().unwrap(), "--method", method]);
        assert!(
            out.status.success(),
            "{method}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "beta_x").unwrap();
        let b: f64 = row[col].parse().unwrap();
        assert!((b - 2.0).abs() < 1e-6, "{method}: {b}");
        assert_eq!(header.last(), Some(&"ci_upper"));
    }
}

#[test]
fn edf_ladder_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    let output = dir.path().join("fit.csv");
    write_fit_input(&input, true);
    let out = spconf(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--method",
        "edf",
        "--ladder",
        "5,8,12",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&output).unwrap().lines().count(), 4);
    let reg = spconf(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--method",
        "regspline",
        "--edf",
        "7",
    ]);
    assert!(reg.status.success(), "{}", String::from_utf8_lossy(&reg.stderr));
    let no_edf = spconf(&["fit", "--input", input.to_str().unwrap(), "--method", "edf"]);
    assert_eq!(no_edf.status.code(), Some(2));
}

#[test]
fn bad_fit_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "x,y,X\n0,0,1\n").unwrap();
    let out = spconf(&["fit", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1") && err.contains("\"Y\""), "{err}");

    fs::write(&input, "x,y,X,Y\n0,0,1,1\n1,0,1,2\n0,1,1,3\n").unwrap();
    let constant = spconf(&["fit", "--input", input.to_str().unwrap()]);
    assert_eq!(constant.status.code(), Some(3));

    let missing = spconf(&["fit", "--input", dir.path().join("none.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn calibrate_and_matern_table() {
    let out = spconf(&["calibrate", "--theta", "0.5", "--n", "49"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let d: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(d > 1.0);
    assert_eq!(
        spconf(&["calibrate", "--theta", "0.5", "--design", "uniform"])
            .status
            .code(),
        Some(2)
    );

    let table = spconf(&["matern-table", "--theta", "0.2", "--nu", "0.5", "--steps", "4"]);
    let text = String::from_utf8(table.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[1], "0,1");
}
