//! Modified Bessel functions of the second kind for integer and half-integer
//! orders.
//!
//! `K₀` and `K₁` use their ascending series (with the logarithmic terms) for
//! `x ≤ 2` and Chebyshev expansions of `√x eˣ K(x)` in `2/x` for `x > 2`; higher integer orders
//! follow from the upward recurrence `K_{ν+1} = K_{ν−1} + (2ν/x) K_ν`, which is
//! stable for `K`. Half-integer orders start from the closed forms of `K_{1/2}`
//! and `K_{3/2}`.

use std::f64::consts::FRAC_PI_2;

use crate::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_CUTOFF: f64 = 2.0;

/// Chebyshev coefficients of `√x eˣ K₀(x)` on `s = 2/x ∈ (0, 1]`, argument `t = 2s − 1`.
const K0_SCALED_CHEB: [f64; 24] = [
    1.220_151_541_032_977_7,
    -0.031_448_101_311_964_5,
    0.001_569_883_885_730_053_4,
    -1.284_954_958_162_780_3e-4,
    1.394_981_371_887_65e-5,
    -1.831_755_522_719_119_5e-6,
    2.766_813_639_445_015e-7,
    -4.660_489_897_687_947_7e-8,
    8.574_034_017_414_226e-9,
    -1.697_534_509_389_061_5e-9,
    3.577_397_281_400_328_4e-10,
    -7.957_489_244_477_397e-11,
    1.855_949_114_954_926_6e-11,
    -4.514_597_883_374_519e-12,
    1.140_340_588_207_344_2e-12,
    -2.980_096_923_148_178_4e-13,
    8.032_890_775_068_374e-14,
    -2.227_513_326_746_296_4e-14,
    6.340_076_476_276_646e-15,
    -1.848_593_377_920_907_2e-15,
    5.512_055_999_404_333e-16,
    -1.678_231_125_754_900_4e-16,
    5.210_391_777_643_549e-17,
    -1.647_580_593_984_251_6e-17,
];

/// Chebyshev coefficients of `√x eˣ K₁(x)` on the same variable.
const K1_SCALED_CHEB: [f64; 24] = [
    1.360_313_095_242_221_3,
    0.103_923_736_576_817_24,
    -0.002_857_816_859_622_779_4,
    1.952_155_184_713_516_3e-4,
    -1.936_197_974_166_083e-5,
    2.406_484_947_837_217e-6,
    -3.501_960_603_087_812_5e-7,
    5.741_084_125_450_049e-8,
    -1.034_576_246_567_809_7e-8,
    2.015_049_755_197_034_6e-9,
    -4.190_354_759_341_925_6e-10,
    9.218_315_187_605_314e-11,
    -2.129_967_838_427_791e-11,
    5.139_639_673_482_343_5e-12,
    -1.289_173_960_949_823e-12,
    3.348_419_666_052_243e-13,
    -8.976_705_182_010_146e-14,
    2.477_154_424_219_598_7e-14,
    -7.019_837_089_214_769e-15,
    2.038_703_166_239_860_8e-15,
    -6.057_047_270_643_018e-16,
    1.838_093_575_243_045_2e-16,
    -5.689_462_849_193_643e-17,
    1.794_051_047_886_345e-17,
];

/// Order of a supported Bessel function: `n` or `n + 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselOrder {
    Integer(u32),
    HalfInteger(u32),
}

impl BesselOrder {
    /// Classifies `nu`; only non-negative integers and half-integers are accepted.
    pub fn from_f64(nu: f64) -> Result<Self> {
        if !(0.0..=1000.0).contains(&nu) {
            return Err(Error::UnsupportedOrder(nu));
        }
        let twice = 2.0 * nu;
        if (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::UnsupportedOrder(nu));
        }
        let twice = twice.round() as u32;
        Ok(if twice.is_multiple_of(2) {
            BesselOrder::Integer(twice / 2)
        } else {
            BesselOrder::HalfInteger(twice / 2)
        })
    }

    pub fn value(self) -> f64 {
        match self {
            BesselOrder::Integer(n) => n as f64,
            BesselOrder::HalfInteger(n) => n as f64 + 0.5,
        }
    }
}

/// `K_ν(x)` for `x > 0` and `ν ∈ {0, 1/2, 1, 3/2, 2, …}`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("bessel_k requires x > 0, got {x}")));
    }
    let order = BesselOrder::from_f64(nu)?;
    Ok(bessel_k_order(order, x))
}

/// `K_ν(x)` for a pre-classified order; `x` must be positive.
pub fn bessel_k_order(order: BesselOrder, x: f64) -> f64 {
    match order {
        BesselOrder::Integer(n) => {
            let (k0, k1) = k0_k1(x);
            recur_up(k0, k1, 0.0, n, x)
        }
        BesselOrder::HalfInteger(n) => {
            let k_half = (FRAC_PI_2 / x).sqrt() * (-x).exp();
            let k_three_halves = k_half * (1.0 + 1.0 / x);
            recur_up(k_half, k_three_halves, 0.5, n, x)
        }
    }
}

/// Steps from `(K_{μ}, K_{μ+1})` up to `K_{μ+n}`.
fn recur_up(k_lo: f64, k_hi: f64, mu: f64, n: u32, x: f64) -> f64 {
    if n == 0 {
        return k_lo;
    }
    let (mut prev, mut cur) = (k_lo, k_hi);
    for i in 1..n {
        let next = prev + 2.0 * (mu + i as f64) / x * cur;
        prev = cur;
        cur = next;
    }
    cur
}

/// `(K₀(x), K₁(x))`.
pub fn k0_k1(x: f64) -> (f64, f64) {
    if x <= SERIES_CUTOFF {
        k0_k1_series(x)
    } else {
        k0_k1_chebyshev(x)
    }
}

fn k0_k1_series(x: f64) -> (f64, f64) {
    let t = 0.25 * x * x;
    let log_half = (0.5 * x).ln();

    // term_k = t^k / (k!)^2 and its (k+1)-shifted companion t^k / (k! (k+1)!).
    let mut term = 1.0;
    let mut term1 = 1.0;
    let mut harmonic = 0.0;
    let mut i0 = 0.0;
    let mut i1_sum = 0.0;
    let mut k0_tail = 0.0;
    let mut k1_tail = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            term *= t / (kf * kf);
            term1 *= t / (kf * (kf + 1.0));
            harmonic += 1.0 / kf;
        }
        let harmonic_next = harmonic + 1.0 / (kf + 1.0);
        i0 += term;
        i1_sum += term1;
        k0_tail += harmonic * term;
        // psi(k+1) + psi(k+2) = H_k + H_{k+1} - 2γ
        k1_tail += (harmonic + harmonic_next - 2.0 * EULER_GAMMA) * term1;
        if term < 1e-18 * i0 && k > 2 {
            break;
        }
    }
    let k0 = -(log_half + EULER_GAMMA) * i0 + k0_tail;
    let i1 = 0.5 * x * i1_sum;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_tail;
    (k0, k1)
}

fn clenshaw(coeffs: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + coeffs[0]
}

fn k0_k1_chebyshev(x: f64) -> (f64, f64) {
    if x > 745.0 {
        return (0.0, 0.0);
    }
    let t = 4.0 / x - 1.0;
    let scale = (-x).exp() / x.sqrt();
    (
        scale * clenshaw(&K0_SCALED_CHEB, t),
        scale * clenshaw(&K1_SCALED_CHEB, t),
    )
}

/// Steed's continued fraction; slower than the Chebyshev form and kept as a
/// cross-check.
#[cfg(test)]
fn k0_k1_continued_fraction(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}
