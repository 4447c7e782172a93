//! Bias and precision of regression estimators for spatially correlated data.
//!
//! The crate provides the pieces needed to study how unmeasured spatial
//! confounding and residual spatial correlation affect estimation of a
//! linear exposure effect:
//!
//! * [`covariance`]: Matérn correlation, modified Bessel functions of the
//!   second kind and correlation-matrix construction.
//! * [`fields`]: location designs, Gaussian-process draws, sample-variance
//!   calibration and the confounded exposure/confounder generator.
//! * [`estimators`]: OLS, GLS with known covariance and ML/REML mixed-model
//!   (universal kriging) fits.
//! * [`splines`]: low-rank thin-plate spline partial-linear fits with GCV,
//!   fixed-e.d.f. and unpenalized smoothing.
//! * [`bias`]: the bias-modulation term `k(X)` and its Monte Carlo average.
//! * [`precision`]: expected GLS precision, GLS/OLS efficiency and the
//!   true/naive OLS variance ratio.
//! * [`experiments`]: seeded, replicate-parallel simulation drivers that
//!   write one CSV per experiment.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bias;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fields;
pub mod linalg;
pub mod optim;
pub mod precision;
pub mod rng;
pub mod splines;
pub mod stats;

pub use error::{Error, Result};
