//! Drift envelopes of step kernels and tails of walks under a pinning potential.

use serde::{Deserialize, Serialize};

use super::{forward_backward, ChainSpec, StepKernel};
use crate::error::{invalid, HardwallError, Result};
use crate::fit::{fit_line, LineFit};

/// Log-densities below this are too far in the underflow region to differentiate.
const DENSITY_FLOOR: f64 = -30.0;

/// Envelope bounds fitted for one conditioning value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeProbe {
    pub v: f64,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftEnvelope {
    pub probes: Vec<EnvelopeProbe>,
    /// Slope parameter of the envelopes, in (0, 1].
    pub a: f64,
    /// Half-width of the neutral zone.
    pub b: f64,
    /// Smallest inward offset outside `[-b, b]`; positive iff the drift points inward there.
    pub d: f64,
    /// Smallest `D` with `max(|lower|, |upper|) <= |v| + D` at every probe.
    pub big_d: f64,
    pub inward_below: bool,
    pub inward_above: bool,
    /// `a·d²`, the quantity that must exceed an unspecified constant for TV decay.
    pub strength: f64,
}

/// Piecewise linear decreasing envelope with slope `-2a` left of `w` and `-2/a` right of it.
pub fn envelope_line(a: f64, w: f64, u: f64) -> f64 {
    let x = u - w;
    if x < 0.0 {
        -2.0 * a * x
    } else {
        -2.0 / a * x
    }
}

/// `(u, d/du log-density)` at `u = x - v`, central differences, underflow excluded.
fn kernel_slopes(k: &StepKernel) -> Vec<(f64, f64)> {
    let g = k.log_density.grid();
    let f = k.log_density.values();
    let h = g.step();
    (1..f.len() - 1)
        .filter(|&i| f[i - 1] > DENSITY_FLOOR && f[i] > DENSITY_FLOOR && f[i + 1] > DENSITY_FLOOR)
        .map(|i| (g.point(i) - k.from, (f[i + 1] - f[i - 1]) / (2.0 * h)))
        .collect()
}

/// Largest `a <= 1` whose envelope slopes `-2a` and `-2/a` bracket every
/// secant slope of the log-density derivative.
fn admissible_a(slopes: &[(f64, f64)], h: f64) -> f64 {
    let mut a: f64 = 1.0;
    for w in slopes.windows(2) {
        let du = w[1].0 - w[0].0;
        if du <= 0.0 || du > 1.5 * h {
            continue;
        }
        let s = (w[1].1 - w[0].1) / du;
        if s >= 0.0 {
            return 0.0;
        }
        a = a.min(-s / 2.0).min(2.0 / -s);
    }
    a
}

/// Tightest `(lower, upper)` offsets for fixed `a`.
fn offsets(a: f64, slopes: &[(f64, f64)]) -> (f64, f64) {
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for &(u, y) in slopes {
        let wl = if y >= 0.0 { u + y / (2.0 * a) } else { u + a * y / 2.0 };
        let wu = if y >= 0.0 { u + a * y / 2.0 } else { u + y / (2.0 * a) };
        lower = lower.min(wl);
        upper = upper.max(wu);
    }
    (lower, upper)
}

/// Fit the drift envelope of a family of kernels, one per conditioning value.
pub fn drift_envelope(kernels: &[StepKernel], b: f64) -> Result<DriftEnvelope> {
    if kernels.is_empty() {
        return invalid("no kernels to fit");
    }
    if !(b >= 0.0) {
        return invalid(format!("neutral zone half-width must be nonnegative, got {b}"));
    }
    let slopes: Vec<Vec<(f64, f64)>> = kernels.iter().map(kernel_slopes).collect();
    for (k, s) in kernels.iter().zip(&slopes) {
        if s.len() < 3 {
            return Err(HardwallError::Numerical(format!("kernel from v={} has too few resolved points", k.from)));
        }
    }
    let h = kernels[0].log_density.grid().step();
    let a = slopes.iter().map(|s| admissible_a(s, h)).fold(1.0, f64::min);
    if !(a > 0.0) {
        let v = kernels[slopes.iter().position(|s| admissible_a(s, h) <= 0.0).unwrap_or(0)].from;
        return Err(HardwallError::Precondition(format!(
            "log-density of the kernel from v={v} is not strictly concave; no envelope slope exists"
        )));
    }
    let mut probes = Vec::with_capacity(kernels.len());
    for (k, s) in kernels.iter().zip(&slopes) {
        let (lower, upper) = offsets(a, s);
        probes.push(EnvelopeProbe { v: k.from, lower, upper, points: s.len() });
    }
    let below: Vec<f64> = probes.iter().filter(|p| p.v < -b).map(|p| p.lower).collect();
    let above: Vec<f64> = probes.iter().filter(|p| p.v > b).map(|p| -p.upper).collect();
    let d = below.iter().chain(&above).copied().fold(f64::INFINITY, f64::min);
    let big_d = probes.iter().map(|p| p.lower.abs().max(p.upper.abs()) - p.v.abs()).fold(f64::NEG_INFINITY, f64::max);
    Ok(DriftEnvelope {
        a,
        b,
        d,
        big_d,
        inward_below: below.iter().all(|&x| x > 0.0),
        inward_above: above.iter().all(|&x| x > 0.0),
        strength: a * d.max(0.0).powi(2),
        probes,
    })
}

/// Points where a kernel leaves a given envelope by more than `tol`.
pub fn envelope_violations(kernels: &[StepKernel], env: &DriftEnvelope, tol: f64) -> Vec<(f64, f64)> {
    let mut bad = Vec::new();
    for (k, p) in kernels.iter().zip(&env.probes) {
        for (u, y) in kernel_slopes(k) {
            if y < envelope_line(env.a, p.lower, u) - tol || y > envelope_line(1.0 / env.a, p.upper, u) + tol {
                bad.push((k.from, u));
            }
        }
    }
    bad
}

/// Growth constants of a potential family, measured on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub a: f64,
    pub b: f64,
    pub big_d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PinnedTail {
    pub growth: GrowthCheck,
    /// `(t, P(|h(l)| > t))`.
    pub tail: Vec<(f64, f64)>,
    /// Fit of `ln P(|h(l)| > t)` on `t`: decay rate `-slope`, prefactor `exp(intercept)`.
    pub fit: LineFit,
}

/// Check that `g_k = -λ_k` (shifted to be nonnegative) grows at least linearly
/// and monotonically outside `[-b, b]` and stays bounded inside.
pub fn check_growth(spec: &ChainSpec, b: f64) -> Result<GrowthCheck> {
    let g = spec.grid();
    if !(b > 0.0) || b >= g.hi().min(-g.lo()) - 2.0 * g.step() {
        return Err(HardwallError::Precondition(format!(
            "neutral zone [-{b}, {b}] leaves no grid outside it on [{}, {}]",
            g.lo(),
            g.hi()
        )));
    }
    let mut a = f64::INFINITY;
    let mut big_d: f64 = 0.0;
    for sp in spec.potentials() {
        let lam = sp.log_weight.values();
        let top = sp.log_weight.max_value();
        let pot: Vec<f64> = lam.iter().map(|&x| top - x).collect();
        for i in 0..pot.len() {
            let u = g.point(i);
            if u.abs() <= b {
                big_d = big_d.max(pot[i]);
                continue;
            }
            a = a.min(pot[i] / u.abs());
            let monotone = if u > b {
                i == 0 || g.point(i - 1) <= b || pot[i] >= pot[i - 1] - 1e-12
            } else {
                i + 1 == pot.len() || g.point(i + 1) >= -b || pot[i] >= pot[i + 1] - 1e-12
            };
            if !monotone {
                return Err(HardwallError::Precondition(format!(
                    "potential at site {} is not monotone outside the neutral zone near u={u}",
                    sp.site
                )));
            }
        }
    }
    if !(a > 0.0) || !big_d.is_finite() {
        return Err(HardwallError::Precondition(format!(
            "potential does not grow linearly outside [-{b}, {b}] (a={a}, D={big_d})"
        )));
    }
    Ok(GrowthCheck { a, b, big_d })
}

/// Tail of `|h(l)|` for a chain whose potentials confine it.
pub fn pinned_tail(spec: &ChainSpec, b: f64, ts: &[f64]) -> Result<PinnedTail> {
    let growth = check_growth(spec, b)?;
    let m = forward_backward(spec)?;
    let l = spec.length();
    let tail: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let (up, down) = m.log_tails(l, t);
            (t, (up.exp() + down.exp()).min(1.0))
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = tail.iter().filter(|p| p.1 > 0.0).map(|&(t, p)| (t, p.ln())).unzip();
    Ok(PinnedTail { growth, tail, fit: fit_line(&x, &y) })
}
