//! Gaussian convolution of log-valued grid functions.
//!
//! Computes `ln ∫ φ_σ²(v - w) exp f(w) dw` at every grid point `v`.
//!
//! Two details matter for the steep functions used here. First, when `f`
//! falls off fast, the bulk of the integrand sits far from `v`. So besides
//! the usual `v ± Kσ` window, each output also sums a window around the
//! integrand's maximiser. That maximiser is read off the upper concave hull
//! of `f(w) - w²/2σ²` and is monotone in `v` whatever `f` is. Second, the
//! trapezoid rule on a smooth, decaying integrand converges spectrally. So
//! the sum uses a stride of several grid cells wherever the local curvature
//! allows. Near walls, kinks, `-inf` regions and the start of a linear
//! extension the stride drops to one cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{GridSpec, LogGridFunction};

/// How `f` continues past the ends of its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extension {
    /// Repeat the edge value.
    Clamp,
    /// No mass beyond the edge.
    NegInfinity,
    /// Continue the last secant.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolveOptions {
    /// Half-width of each summation window in kernel standard deviations.
    pub window_sigmas: f64,
    /// Quadrature nodes per effective standard deviation of the integrand.
    pub nodes_per_sigma: f64,
    /// Terms more than this far below the largest (in log units) are skipped.
    pub negligible: f64,
}

impl Default for ConvolveOptions {
    fn default() -> Self {
        Self { window_sigmas: 8.0, nodes_per_sigma: 2.5, negligible: 40.0 }
    }
}

/// Number of output points whose value depended on an edge extension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub left_affected: usize,
    pub right_affected: usize,
}

impl EdgeReport {
    pub fn merge(self, other: Self) -> Self {
        Self {
            left_affected: self.left_affected.max(other.left_affected),
            right_affected: self.right_affected.max(other.right_affected),
        }
    }
}

/// `ln (φ_variance * exp f)` on the grid of `f`.
pub fn log_convolve_gaussian(
    f: &LogGridFunction,
    variance: f64,
    left: Extension,
    right: Extension,
) -> Result<(LogGridFunction, EdgeReport)> {
    log_convolve_gaussian_onto(f, variance, left, right, *f.grid(), ConvolveOptions::default())
}

/// Convolution evaluated on `out`, a grid with the same step whose points
/// lie on the lattice of `f`'s grid (an integer shift, any length).
pub fn log_convolve_gaussian_onto(
    f: &LogGridFunction,
    variance: f64,
    left: Extension,
    right: Extension,
    out: GridSpec,
    options: ConvolveOptions,
) -> Result<(LogGridFunction, EdgeReport)> {
    let offset = lattice_offset(f.grid(), &out)?;
    let plan = Plan::new(f, variance, left, right, options, offset, out.count())?;
    let vals: Vec<(f64, u8)> = (0..out.count()).into_par_iter().map(|i| plan.output(i, None).0).collect();
    finish(out, vals)
}

fn lattice_offset(from: &GridSpec, to: &GridSpec) -> Result<isize> {
    if (from.step() - to.step()).abs() > 1e-12 * from.step() {
        return invalid("output grid must share the input step");
    }
    let shift = (to.lo() - from.lo()) / from.step();
    let k = shift.round();
    if (shift - k).abs() > 1e-6 {
        return invalid(format!("output grid is off the input lattice by {} steps", shift - k));
    }
    Ok(k as isize)
}

/// Gaussian smoothing of `values` against the weights `exp(log_weight)`.
///
/// Returns the log normaliser `ln ∫ φ(v - w) e^{log_weight(w)} dw` and the
/// weighted average of `values` at every grid point `v`. Beyond the grid,
/// `values` repeat their edge entries.
pub fn gaussian_expectation(
    log_weight: &LogGridFunction,
    values: &[f64],
    variance: f64,
    left: Extension,
    right: Extension,
) -> Result<(LogGridFunction, Vec<f64>)> {
    if values.len() != log_weight.len() {
        return invalid("values and weights differ in length");
    }
    let n = log_weight.len();
    let plan = Plan::new(log_weight, variance, left, right, ConvolveOptions::default(), 0, n)?;
    let out: Vec<((f64, u8), f64)> = (0..n).into_par_iter().map(|i| plan.output(i, Some(values))).collect();
    let means = out.iter().map(|o| o.1).collect();
    let (lz, _) = finish(*log_weight.grid(), out.into_iter().map(|o| o.0).collect())?;
    Ok((lz, means))
}

fn finish(grid: GridSpec, out: Vec<(f64, u8)>) -> Result<(LogGridFunction, EdgeReport)> {
    let mut report = EdgeReport::default();
    let mut vals = Vec::with_capacity(out.len());
    for (v, flag) in out {
        if flag & 1 != 0 {
            report.left_affected += 1;
        }
        if flag & 2 != 0 {
            report.right_affected += 1;
        }
        vals.push(v);
    }
    Ok((LogGridFunction::new(grid, vals)?, report))
}

struct Plan<'a> {
    f: &'a [f64],
    h: f64,
    variance: f64,
    left: Extension,
    right: Extension,
    opts: ConvolveOptions,
    half_width: isize,
    log_norm: f64,
    /// Output `i` sits at input lattice index `i + offset`.
    offset: isize,
    /// Maximising input index for every output.
    argmax: Vec<usize>,
    curvature: SparseMax,
    left_slope: f64,
    right_slope: f64,
}

impl<'a> Plan<'a> {
    fn new(
        f: &'a LogGridFunction,
        variance: f64,
        left: Extension,
        right: Extension,
        opts: ConvolveOptions,
        offset: isize,
        n_out: usize,
    ) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return invalid(format!("kernel variance must be positive, got {variance}"));
        }
        let vals = f.values();
        let n = vals.len();
        let h = f.grid().step();
        let sigma = variance.sqrt();
        let half_width = (opts.window_sigmas * sigma / h).ceil() as isize;
        let secant = |a: f64, b: f64| if a.is_finite() && b.is_finite() { b - a } else { 0.0 };
        let left_slope = secant(vals[0], vals[1]);
        let right_slope = secant(vals[n - 2], vals[n - 1]);
        let mut plan = Self {
            f: vals,
            h,
            variance,
            left,
            right,
            opts,
            half_width,
            log_norm: -0.5 * (2.0 * std::f64::consts::PI * variance).ln(),
            offset,
            argmax: Vec::new(),
            curvature: SparseMax::default(),
            left_slope,
            right_slope,
        };
        plan.argmax = plan.hull_argmax(n_out);
        let mut curv: Vec<f64> = (0..n as isize)
            .map(|j| {
                let d = plan.ext(j - 1) - 2.0 * plan.ext(j) + plan.ext(j + 1);
                let c = d.abs() / (h * h);
                if c.is_nan() {
                    if plan.ext(j) == f64::NEG_INFINITY
                        && plan.ext(j - 1) == f64::NEG_INFINITY
                        && plan.ext(j + 1) == f64::NEG_INFINITY
                    {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    c
                }
            })
            .collect();
        // A secant continuation is smooth to the eye of the stencil above but
        // still jumps in second derivative, which a coarse stride misses.
        if left == Extension::Linear {
            curv[0] = f64::INFINITY;
        }
        if right == Extension::Linear {
            curv[n - 1] = f64::INFINITY;
        }
        plan.curvature = SparseMax::new(&curv);
        Ok(plan)
    }

    #[inline]
    fn ext(&self, j: isize) -> f64 {
        let n = self.f.len() as isize;
        if j < 0 {
            match self.left {
                Extension::Clamp => self.f[0],
                Extension::NegInfinity => f64::NEG_INFINITY,
                Extension::Linear => self.f[0] + j as f64 * self.left_slope,
            }
        } else if j >= n {
            match self.right {
                Extension::Clamp => self.f[(n - 1) as usize],
                Extension::NegInfinity => f64::NEG_INFINITY,
                Extension::Linear => self.f[(n - 1) as usize] + (j - n + 1) as f64 * self.right_slope,
            }
        } else {
            self.f[j as usize]
        }
    }

    /// For every output index, the grid index maximising
    /// `f(w) - (v - w)²/2σ²` over the grid itself.
    fn hull_argmax(&self, n_out: usize) -> Vec<usize> {
        let n = self.f.len();
        let c = self.h * self.h / (2.0 * self.variance);
        // Upper hull of (j, f_j - c j²).
        let mut hull: Vec<(f64, f64, usize)> = Vec::new();
        for j in 0..n {
            if !self.f[j].is_finite() {
                continue;
            }
            let p = (j as f64, self.f[j] - c * (j * j) as f64, j);
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // Drop b if it lies on or below the chord a-p.
                if (b.1 - a.1) * (p.0 - a.0) <= (p.1 - a.1) * (b.0 - a.0) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        if hull.is_empty() {
            return vec![0; n_out];
        }
        // Objective at lattice index p: A_j + 2 c p j. The optimal vertex moves right with p.
        let mut out = Vec::with_capacity(n_out);
        let mut k = 0;
        for i in 0..n_out {
            let t = 2.0 * c * (i as isize + self.offset) as f64;
            while k + 1 < hull.len() && hull[k + 1].1 + t * hull[k + 1].0 >= hull[k].1 + t * hull[k].0 {
                k += 1;
            }
            out.push(hull[k].2);
        }
        out
    }

    /// Value at output `i`, flags (bit 0: left extension used, bit 1: right)
    /// and optionally the weighted mean of `values`.
    fn output(&self, i: usize, values: Option<&[f64]>) -> ((f64, u8), f64) {
        let n = self.f.len() as isize;
        let jstar = self.argmax[i] as isize;
        let i = i as isize + self.offset;
        let w = self.half_width;
        let mut windows = [(i - w, i + w), (jstar - w, jstar + w)];
        if windows[1].0 < windows[0].0 {
            windows.swap(0, 1);
        }
        let merged = windows[1].0 <= windows[0].1 + 1;
        let spans: &[(isize, isize)] = if merged {
            &[(windows[0].0, windows[0].1.max(windows[1].1))][..]
        } else {
            &windows[..]
        };

        // Stride from the worst curvature seen by either window.
        let mut kappa: f64 = 0.0;
        for &(a, b) in spans {
            let (ca, cb) = (a.max(0), b.min(n - 1));
            if ca <= cb {
                kappa = kappa.max(self.curvature.query(ca as usize, cb as usize));
            }
        }
        let sigma_eff = 1.0 / (1.0 / self.variance + kappa).sqrt();
        let stride = ((sigma_eff / (self.opts.nodes_per_sigma * self.h)).floor() as isize)
            .clamp(1, (w / 8).max(1));

        let mut terms: Vec<(f64, isize)> = Vec::with_capacity(64);
        let mut best = f64::NEG_INFINITY;
        let inv2v = 1.0 / (2.0 * self.variance);
        for &(a, b) in spans {
            // Lattice j = i + r * stride inside [a, b].
            let rlo = div_ceil(a - i, stride);
            let rhi = div_floor(b - i, stride);
            for r in rlo..=rhi {
                let j = i + r * stride;
                let fj = self.ext(j);
                if fj == f64::NEG_INFINITY {
                    continue;
                }
                let d = (j - i) as f64 * self.h;
                let t = fj - d * d * inv2v;
                if t > best {
                    best = t;
                }
                terms.push((t, j));
            }
        }
        if best == f64::NEG_INFINITY {
            return ((f64::NEG_INFINITY, 0), f64::NAN);
        }
        let cut = best - self.opts.negligible;
        let (mut s, mut sv) = (0.0, 0.0);
        let mut flags = 0u8;
        for &(t, j) in &terms {
            if t < cut {
                continue;
            }
            let e = (t - best).exp();
            s += e;
            if j < 0 {
                flags |= 1;
            } else if j >= n {
                flags |= 2;
            }
            if let Some(vals) = values {
                sv += e * vals[j.clamp(0, n - 1) as usize];
            }
        }
        let value = best + s.ln() + (stride as f64 * self.h).ln() + self.log_norm;
        ((value, flags), if values.is_some() { sv / s } else { 0.0 })
    }
}

#[inline]
fn div_floor(a: isize, b: isize) -> isize {
    a.div_euclid(b)
}

#[inline]
fn div_ceil(a: isize, b: isize) -> isize {
    -((-a).div_euclid(b))
}

/// Range-maximum table.
#[derive(Default)]
struct SparseMax {
    levels: Vec<Vec<f64>>,
}

impl SparseMax {
    fn new(v: &[f64]) -> Self {
        let mut levels = vec![v.to_vec()];
        let mut span = 1;
        while 2 * span <= v.len() {
            let prev = levels.last().unwrap();
            let next: Vec<f64> = (0..=v.len() - 2 * span).map(|i| prev[i].max(prev[i + span])).collect();
            levels.push(next);
            span *= 2;
        }
        Self { levels }
    }

    fn query(&self, a: usize, b: usize) -> f64 {
        let len = b - a + 1;
        let k = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let lvl = &self.levels[k];
        lvl[a].max(lvl[b + 1 - (1 << k)])
    }
}
