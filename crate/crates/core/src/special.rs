//! Gaussian special functions in log space.

use libm::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// ln Φ(x) for the standard normal CDF, accurate far into both tails.
pub fn log_ndtr(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 6.0 {
        // Φ(x) = 1 - Φ(-x); ln_1p keeps the tiny complement.
        return (-upper_tail(x)).ln_1p();
    }
    if x > -5.0 {
        return (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln();
    }
    let z = -x;
    -0.5 * z * z - LN_SQRT_2PI + mills_ratio(z).ln()
}

/// Φ(-x) = P(Z > x), for x well into the upper tail.
fn upper_tail(x: f64) -> f64 {
    if x > 38.5 {
        return 0.0;
    }
    (-0.5 * x * x - LN_SQRT_2PI).exp() * mills_ratio(x)
}

/// Mills ratio Φ(-z)/φ(z) via its continued fraction, for z >= 5.
fn mills_ratio(z: f64) -> f64 {
    // 1/(z + 1/(z + 2/(z + 3/(z + ...)))), evaluated bottom-up.
    let terms = if z < 8.0 { 80 } else { 40 };
    let mut t = z;
    for k in (1..=terms).rev() {
        t = z + k as f64 / t;
    }
    1.0 / t
}

/// Standard normal log-density.
#[inline]
pub fn log_phi(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Gaussian log-density with the given variance.
#[inline]
pub fn log_gauss(x: f64, variance: f64) -> f64 {
    -0.5 * x * x / variance - 0.5 * (2.0 * std::f64::consts::PI * variance).ln()
}

/// Numerically safe ln(e^a + e^b).
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ln(1 - e^x) for x <= 0.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
