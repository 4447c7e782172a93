//! Matérn correlation and correlation matrices.

mod bessel;

pub use bessel::{bessel_k, bessel_k_order, k0_k1, BesselOrder};

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::fields::LocationSet;
use crate::linalg::SpdFactor;
use crate::{Error, Result};

/// Below this scaled distance the Matérn correlation equals 1 in double precision.
const TINY_SCALED_DISTANCE: f64 = 1e-100;

/// Range and smoothness of a Matérn correlation function.
///
/// The parameterization is `R(d) = (u^ν K_ν(u)) / (Γ(ν) 2^{ν−1})` with
/// `u = 2√ν d / θ`, so `ν = 1/2` gives `exp(−√2 d / θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternSpec {
    theta: f64,
    nu: f64,
    order: BesselOrder,
    log_norm: f64,
    scale: f64,
}

impl MaternSpec {
    pub fn new(theta: f64, nu: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Matérn range must be positive, got {theta}"
            )));
        }
        if !(nu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Matérn smoothness must be positive, got {nu}"
            )));
        }
        let order = BesselOrder::from_f64(nu)?;
        let log_norm = -(ln_gamma_half_integer(order) + (nu - 1.0) * 2f64.ln());
        Ok(MaternSpec {
            theta,
            nu,
            order,
            log_norm,
            scale: 2.0 * nu.sqrt() / theta,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Same smoothness, different range.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        MaternSpec::new(theta, self.nu)
    }

    /// Correlation at distance `d`.
    pub fn correlation(&self, d: f64) -> f64 {
        let u = self.scale * d;
        if u < TINY_SCALED_DISTANCE {
            return 1.0;
        }
        if self.order == BesselOrder::HalfInteger(0) {
            return (-u).exp();
        }
        let k = bessel_k_order(self.order, u);
        if k == 0.0 {
            return 0.0;
        }
        let direct = self.log_norm.exp() * u.powf(self.nu) * k;
        if direct.is_finite() && direct > 0.0 {
            return direct.min(1.0);
        }
        (self.log_norm + self.nu * u.ln() + k.ln()).exp().min(1.0)
    }
}

/// `ln Γ(ν)` for integer and half-integer `ν > 0`.
fn ln_gamma_half_integer(order: BesselOrder) -> f64 {
    match order {
        // Γ(n) = (n-1)!
        BesselOrder::Integer(n) => (1..n).map(|k| (k as f64).ln()).sum(),
        // Γ(n + 1/2) = √π ∏_{k=1}^{n} (k - 1/2)
        BesselOrder::HalfInteger(n) => 0.5 * PI.ln() + (1..=n).map(|k| (k as f64 - 0.5).ln()).sum::<f64>(),
    }
}

/// Matérn correlation at distance `d ≥ 0`; exactly 1 at `d = 0`.
pub fn matern(d: f64, spec: &MaternSpec) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be non-negative, got {d}")));
    }
    Ok(spec.correlation(d))
}

/// A symmetric, unit-diagonal spatial correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    values: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Cholesky factor under the jitter escalation policy.
    pub fn factor(&self) -> Result<SpdFactor> {
        SpdFactor::new(&self.values)
    }
}

/// Pairwise Matérn correlations between all locations.
pub fn correlation_matrix(locs: &LocationSet, spec: &MaternSpec) -> CorrelationMatrix {
    let n = locs.len();
    let mut values = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let r = spec.correlation(locs.distance(i, j));
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    CorrelationMatrix { values }
}

/// Correlations from a precomputed distance matrix.
pub fn correlation_from_distances(distances: &DMatrix<f64>, spec: &MaternSpec) -> DMatrix<f64> {
    let n = distances.nrows();
    let mut values = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let r = spec.correlation(distances[(i, j)]);
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_is_one() {
        for nu in [0.5, 1.0, 1.5, 2.0, 2.5] {
            let spec = MaternSpec::new(0.3, nu).unwrap();
            assert_eq!(matern(0.0, &spec).unwrap(), 1.0);
        }
    }

    #[test]
    fn exponential_case() {
        let spec = MaternSpec::new(1.0, 0.5).unwrap();
        let r = matern(1.0, &spec).unwrap();
        assert!((r - (-(2f64.sqrt())).exp()).abs() < 1e-15);
        assert!((r - 0.243_116_734_434_101_5).abs() < 1e-12);
    }

    #[test]
    fn order_two_reference_value() {
        // 40-digit evaluation of the Matérn formula at d = 0.3, θ = 0.5, ν = 2.
        let spec = MaternSpec::new(0.5, 2.0).unwrap();
        let r = matern(0.3, &spec).unwrap();
        assert!((r - 0.595_949_235_750_872_3).abs() < 1e-13);
    }

    #[test]
    fn gamma_normalization() {
        assert!((ln_gamma_half_integer(BesselOrder::Integer(2)) - 0.0).abs() < 1e-15);
        assert!((ln_gamma_half_integer(BesselOrder::Integer(4)) - 6f64.ln()).abs() < 1e-15);
        assert!((ln_gamma_half_integer(BesselOrder::HalfInteger(0)) - PI.sqrt().ln()).abs() < 1e-15);
        assert!((ln_gamma_half_integer(BesselOrder::HalfInteger(2)) - (0.75 * PI.sqrt()).ln()).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs() {
        assert!(MaternSpec::new(0.0, 2.0).is_err());
        assert!(MaternSpec::new(0.5, 0.0).is_err());
        assert!(MaternSpec::new(0.5, 0.7).is_err());
        let spec = MaternSpec::new(0.5, 2.0).unwrap();
        assert!(matern(-0.1, &spec).is_err());
    }

    #[test]
    fn duplicate_locations_give_unit_block() {
        let locs = LocationSet::new(vec![[0.2, 0.3], [0.2, 0.3]]).unwrap();
        let r = correlation_matrix(&locs, &MaternSpec::new(0.5, 2.0).unwrap());
        assert_eq!(r.values(), &DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn vanishing_range_gives_identity() {
        let locs = LocationSet::new(vec![[0.0, 0.0], [0.1, 0.0], [0.5, 0.9], [1.0, 1.0]]).unwrap();
        let r = correlation_matrix(&locs, &MaternSpec::new(1e-8, 2.0).unwrap());
        let off = r.values() - DMatrix::identity(4, 4);
        assert!(off.amax() < 1e-12);
    }

    #[test]
    fn entries_match_elementwise_calls() {
        let locs = LocationSet::new(vec![[0.11, 0.52], [0.93, 0.07], [0.48, 0.61]]).unwrap();
        let spec = MaternSpec::new(0.5, 2.0).unwrap();
        let r = correlation_matrix(&locs, &spec);
        for i in 0..3 {
            for j in 0..3 {
                let d = ((locs.coords()[i][0] - locs.coords()[j][0]).powi(2)
                    + (locs.coords()[i][1] - locs.coords()[j][1]).powi(2))
                .sqrt();
                let expect = if i == j { 1.0 } else { matern(d, &spec).unwrap() };
                assert_eq!(r.values()[(i, j)], expect);
            }
        }
    }
}
