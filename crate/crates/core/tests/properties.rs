//! Property-based invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use spconf::bias::{BiasInputs, BiasOperator, Weighting};
use spconf::covariance::{bessel_k, MaternSpec};
use spconf::estimators::ols_fit;
use spconf::experiments::{ExperimentId, ExperimentSpec};
use spconf::fields::{sample_grid, CalibrationFactors, ScenarioParams};
use spconf::precision::naive_ols_variance_ratio;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matern_is_a_decreasing_correlation(theta in 0.01f64..3.0, nu_twice in 1u32..7, d in 0.0f64..3.0, step in 1e-6f64..0.5) {
        let spec = MaternSpec::new(theta, nu_twice as f64 / 2.0).unwrap();
        let (a, b) = (spec.correlation(d), spec.correlation(d + step));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
        let wider = spec.with_theta(theta * 1.5).unwrap().correlation(d);
        prop_assert!(wider >= a);
    }

    #[test]
    fn bessel_recurrence(nu_twice in 1u32..6, x in 1e-3f64..40.0) {
        let nu = nu_twice as f64 / 2.0;
        let mid = bessel_k(nu, x).unwrap();
        let hi = bessel_k(nu + 1.0, x).unwrap();
        prop_assert!(mid > 0.0 && hi > mid);
        if nu >= 1.0 {
            let lo = bessel_k(nu - 1.0, x).unwrap();
            let want = lo + 2.0 * nu / x * mid;
            prop_assert!(((hi - want) / want).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_recovers_exact_lines(a in -10.0f64..10.0, b in -10.0f64..10.0, xs in prop::collection::vec(-5.0f64..5.0, 4..30)) {
        let x = DVector::from_vec(xs);
        prop_assume!(x.add_scalar(-x.mean()).norm() > 1e-3);
        let y = x.map(|v| a + b * v);
        let fit = ols_fit(&x, &y).unwrap();
        prop_assert!((fit.beta_x - b).abs() < 1e-8 * (1.0 + b.abs()));
        prop_assert!((fit.beta0 - a).abs() < 1e-7 * (1.0 + a.abs()));
    }

    #[test]
    fn naive_ratio_is_one_without_correlation(xs in prop::collection::vec(-5.0f64..5.0, 3..40)) {
        let x = DVector::from_vec(xs);
        prop_assume!(x.add_scalar(-x.mean()).norm() > 1e-3);
        let n = x.len();
        let r = naive_ols_variance_ratio(&x, &DMatrix::identity(n, n)).unwrap();
        prop_assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_is_invariant_to_exposure_scale(c in 0.1f64..10.0, seed in any::<u64>()) {
        let inputs = BiasInputs {
            locs: sample_grid(25).unwrap(),
            params: ScenarioParams::from_fractions(0.4, 0.6, 0.7, 0.15),
            calibration: CalibrationFactors::NONE,
        };
        let op = BiasOperator::new(&inputs, Weighting::Gls).unwrap();
        let mut state = seed;
        let x = DVector::from_fn(25, |_, _| {
            state = spconf::rng::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let (k1, k2) = (op.k(&x).unwrap(), op.k(&(&x * c)).unwrap());
        prop_assert!((k1 - k2).abs() < 1e-9 * (1.0 + k1.abs()));
    }

    #[test]
    fn experiment_settings_round_trip(seed in any::<u64>(), n_sims in 2usize..500, p in 0.0f64..1.0) {
        for id in [ExperimentId::BiasGrid, ExperimentId::EstimatedFitGrid, ExperimentId::PrecisionGrid] {
            let mut s = std::collections::BTreeMap::new();
            s.insert("seed".to_string(), seed.to_string());
            s.insert("n_sims".to_string(), n_sims.to_string());
            let frac = if id == ExperimentId::PrecisionGrid { "p_g" } else if id == ExperimentId::BiasGrid { "p_c" } else { "rho" };
            s.insert(frac.to_string(), p.to_string());
            let spec = ExperimentSpec::from_settings(id, &s).unwrap();
            let back: std::collections::BTreeMap<String, String> =
                spec.settings().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            prop_assert_eq!(ExperimentSpec::from_settings(id, &back).unwrap(), spec);
        }
    }
}
