//! Statistical behaviour of the simulation modules beyond the acceptance set.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use spconf::bias::{expected_k_cell, BiasGridConfig};
use spconf::covariance::{correlation_matrix, MaternSpec};
use spconf::experiments::fit_grid::{simulate_fit_grid, summarize_cell};
use spconf::experiments::{ExperimentId, ExperimentSpec, FitMethod, DEFAULT_THETAS};
use spconf::fields::{
    calibration_factor, sample_gp, sample_uniform, sample_variance, standard_normal_vector, CalibrationFactors, Design,
    FieldSpec, ScenarioFields, ScenarioParams,
};
use spconf::precision::precision_grid;
use spconf::rng::stream;
use spconf::splines::{build_tps_basis, partial_spline_fit, SmoothControl};
use spconf::stats::McEstimate;

fn settings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn bias_config(p_c: f64, p_z: f64, n_sims: usize) -> BiasGridConfig {
    BiasGridConfig {
        theta_c: vec![],
        theta_u: vec![],
        p_c,
        p_z,
        n: 100,
        design: Design::Grid,
        n_sims,
        seed: 17,
        nu: 2.0,
        calibrate: true,
        calibration_reps: 1,
        residual_field_share: None,
    }
}

#[test]
fn calibrated_fields_hit_nominal_sample_variance() {
    for theta in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let matern = MaternSpec::new(theta, 2.0).unwrap();
        let d = calibration_factor(&matern, 100, &Design::Uniform, 200, 5).unwrap();
        let spec = FieldSpec::new(0.0, 2.0, matern).calibrated(d);
        let vars: Vec<f64> = (0..1000u64)
            .map(|rep| {
                let locs = sample_uniform(100, 1000 + rep).unwrap();
                sample_variance(&sample_gp(&locs, &spec, rep).unwrap())
            })
            .collect();
        let mean = McEstimate::from_samples(&vars).mean;
        assert!(
            (mean / 2.0 - 1.0).abs() < 0.03,
            "θ={theta}: mean sample variance {mean}"
        );
    }
}

#[test]
fn confounder_covariance_does_not_depend_on_rho() {
    let locs = sample_uniform(25, 2).unwrap();
    let reps = 20_000;
    let base = ScenarioParams {
        theta_c: 0.3,
        theta_u: 0.1,
        sigma_z2: 1.5,
        ..ScenarioParams::default()
    };
    let target = correlation_matrix(&locs, &base.matern_c().unwrap()).into_inner() * base.sigma_z2;
    for rho in [0.0, 0.5, 0.95] {
        let params = ScenarioParams { rho, ..base };
        let fields = ScenarioFields::new(&locs, &params, CalibrationFactors::NONE).unwrap();
        let mut rng = stream(3, &[rho.to_bits()]);
        let mut acc = DMatrix::zeros(25, 25);
        for _ in 0..reps {
            let z = fields.sample_confounded_pair(&mut rng).z;
            acc += &z * z.transpose();
        }
        let err = (acc / reps as f64 - &target).abs().max();
        assert!(err < 0.07, "ρ={rho}: max covariance error {err}");
    }
}

#[test]
fn ols_k_stays_near_p_c() {
    let base = bias_config(0.5, 0.5, 200);
    let mut worst = (0.0f64, 0.0, 0.0);
    for &c in &DEFAULT_THETAS {
        for &u in &DEFAULT_THETAS {
            let dev = (expected_k_cell(&base, c, u).unwrap().ols.mean - 0.5).abs();
            if dev > worst.0 {
                worst = (dev, c, u);
            }
        }
    }
    assert!(
        worst.0 <= 0.05,
        "max |E k_ols − p_c| = {:.4} at θc={} θu={}",
        worst.0,
        worst.1,
        worst.2
    );
}

#[test]
fn bias_grid_shapes() {
    let base = bias_config(0.5, 0.5, 50);
    let strong = bias_config(0.5, 0.9, 200);
    let reduced = expected_k_cell(&strong, 0.9, 0.05).unwrap().gls;
    assert!(reduced.mean + 3.0 * reduced.se < 0.25, "θc ≫ θu: {reduced:?}");
    let inflated = expected_k_cell(&strong, 0.1, 0.9).unwrap().gls;
    assert!(inflated.mean - 3.0 * inflated.se > 0.5, "θc ≪ θu: {inflated:?}");

    // A residual field at the unconfounded scale lowers k where θ_u < θ_c.
    let multiscale = BiasGridConfig {
        residual_field_share: Some(0.5),
        ..base.clone()
    };
    let pairs = [(0.9, 0.1), (0.5, 0.1), (0.9, 0.3)];
    let avg = |cfg: &BiasGridConfig| {
        pairs
            .iter()
            .map(|&(c, u)| expected_k_cell(cfg, c, u).unwrap().gls.mean)
            .sum::<f64>()
            / pairs.len() as f64
    };
    let (plain, shifted) = (avg(&base), avg(&multiscale));
    assert!(shifted < plain, "multiscale {shifted} vs baseline {plain}");
}

#[test]
fn gcv_keeps_pure_noise_smooth() {
    let locs = sample_uniform(100, 8).unwrap();
    let basis = build_tps_basis(&locs, 60).unwrap();
    let mut small = 0;
    for rep in 0..200u64 {
        let mut rng = stream(8, &[rep]);
        let x = standard_normal_vector(100, &mut rng);
        let y = &x * 0.5 + standard_normal_vector(100, &mut rng);
        let fit = partial_spline_fit(&x, &y, &basis, SmoothControl::Gcv).unwrap();
        if fit.edf.unwrap() < 10.0 {
            small += 1;
        }
    }
    assert!(small >= 180, "{small} of 200 GCV fits below 10 e.d.f.");
}

#[test]
fn naive_variance_rarely_overstates_uncertainty() {
    let spec = ExperimentSpec::from_settings(
        ExperimentId::PrecisionGrid,
        &settings(&[("seed", "9"), ("p_g", "0.5"), ("n_sims", "40")]),
    )
    .unwrap();
    for c in precision_grid(&spec.precision_scenarios(), spec.n_sims, spec.seed).unwrap() {
        let r = c.naive_ratio;
        assert!(r.mean >= 1.0 - 3.0 * r.se, "θx={} θg={}: {r:?}", c.theta_x, c.theta_g);
    }
}

#[test]
fn spline_tradeoffs_at_large_confounding_scale() {
    let spec = ExperimentSpec::from_settings(
        ExperimentId::FixedEdfGrid,
        &settings(&[
            ("seed", "21"),
            ("theta_c", "0.7,0.9"),
            ("theta_u", "0.3,0.1"),
            ("n_sims", "300"),
            ("methods", "regspline5,regspline15,regspline30,penspline15"),
        ]),
    )
    .unwrap();
    let cells = simulate_fit_grid(&spec.fit_grid_spec()).unwrap();
    let beta = spec.params.beta_x;
    for cell in &cells {
        let s = summarize_cell(cell, beta);
        let get = |m| s.iter().find(|x| x.method == m).unwrap();
        let (reg, pen) = (get(FitMethod::RegSpline(15)), get(FitMethod::PenSpline(15)));
        if (cell.theta_c, cell.theta_u) == (0.7, 0.3) {
            assert!(
                reg.variance.0 > pen.variance.0,
                "regression {:?} vs penalized {:?}",
                reg.variance,
                pen.variance
            );
        }
        if (cell.theta_c, cell.theta_u) == (0.9, 0.1) {
            let (b5, b30) = (
                get(FitMethod::RegSpline(5)).rel_bias,
                get(FitMethod::RegSpline(30)).rel_bias,
            );
            assert!(
                b30.mean.abs() <= b5.mean.abs() + 3.0 * b30.se.max(b5.se),
                "5: {b5:?} 30: {b30:?}"
            );
        }
    }
}
