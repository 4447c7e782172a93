//! Monte Carlo summaries.

/// Mean of a sample with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    /// Sample mean and `sd / √n` (sd with the `n − 1` divisor). A single
    /// observation gets an infinite standard error.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                se: f64::INFINITY,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return McEstimate {
                mean,
                se: f64::INFINITY,
                n,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        McEstimate {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Delta-method summary of `ln(mean)`.
    pub fn ln(&self) -> McEstimate {
        McEstimate {
            mean: self.mean.ln(),
            se: self.se / self.mean.abs(),
            n: self.n,
        }
    }

    /// `|mean − target| ≤ k · se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Unbiased sample variance with its standard error, using the fourth
/// central moment: `Var(s²) ≈ (m4 − (n−3)/(n−1) s⁴) / n`.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (f64::NAN, f64::INFINITY);
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let s2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let var_s2 = ((m4 - (nf - 3.0) / (nf - 1.0) * s2 * s2) / nf).max(0.0);
    (s2, var_s2.sqrt())
}
