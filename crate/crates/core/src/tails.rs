//! Law of the leaf minimum of the depth-n walk, by the one-generation recursion
//! in absolute coordinates.
//!
//! `F_n(v) = ln P(min over depth-n leaves >= v)`. Splitting at the root,
//! `F_n(v) = 2 ln E exp F_{n-1}(v - Z)`, so no re-centering (and no
//! interpolation) happens inside the recursion. Centered quantities are read
//! off at `v = -m(n) + u`.

use serde::{Deserialize, Serialize};

use crate::convolve::{log_convolve_gaussian_onto, ConvolveOptions, EdgeReport, Extension};
use crate::error::{invalid, HardwallError, Result};
use crate::grid::{GridSpec, LogGridFunction};
use crate::model::{frac_log2, level_of, m_value, reduced_height, C0};
use crate::special::{log1m_exp, log_ndtr};

/// Left-edge values must be this close to zero for the clamp extension to be sound.
const LEFT_EDGE_TOLERANCE: f64 = 1e-6;
/// Beyond the right edge a curve is treated as `-inf` once it is this low there.
pub const RIGHT_EDGE_CUTOFF: f64 = 200.0;

#[derive(Debug, Clone)]
pub struct TailCurve {
    pub n: usize,
    /// `ln P(min_{L_n} h >= v)` on the absolute grid.
    pub f: LogGridFunction,
    /// `ln P(min_{L_n} h < v)`, carried separately so that probabilities
    /// close to one keep their full relative precision.
    pub complement: LogGridFunction,
    /// Edge contamination accumulated up to this depth.
    pub edges: EdgeReport,
}

impl TailCurve {
    /// Depth 0: the single leaf is the root, pinned at 0.
    pub fn root(grid: GridSpec) -> Self {
        Self {
            n: 0,
            f: LogGridFunction::indicator_at_most(grid, 0.0),
            complement: LogGridFunction::indicator_at_least(grid, 0.0),
            edges: EdgeReport::default(),
        }
    }

    /// Half-tree version: `F = 2 * Fhat`.
    pub fn fhat(&self) -> LogGridFunction {
        self.f.scale(0.5)
    }

    pub fn grid(&self) -> &GridSpec {
        self.f.grid()
    }
}

/// One generation of the recursion, evaluated on the window `out`
/// (same lattice as `prev`).
///
/// Both `ln p̂ = ln E p(v - Z)` and `ln (1 - p̂) = ln E (1 - p)(v - Z)` are
/// plain log-convolutions. Each is trusted where it is the smaller of the
/// two, and the other follows from it through `log1m_exp`. Without this,
/// roundoff in `F ≈ 0` doubles every generation.
pub fn tail_step_onto(prev: &TailCurve, out: GridSpec) -> Result<TailCurve> {
    let n = out.count();
    let (mut log_ph, mut log_qh) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut edges = prev.edges;
    if prev.n == 0 {
        // Two independent N(0,1) children.
        for v in out.points() {
            log_ph.push(log_ndtr(-v));
            log_qh.push(log_ndtr(v));
        }
    } else {
        let opts = ConvolveOptions::default();
        let (a, ea) = log_convolve_gaussian_onto(&prev.f, 1.0, Extension::Clamp, Extension::Linear, out, opts)?;
        let (b, eb) =
            log_convolve_gaussian_onto(&prev.complement, 1.0, Extension::Linear, Extension::Clamp, out, opts)?;
        edges = EdgeReport {
            left_affected: ea.left_affected.max(eb.left_affected),
            right_affected: ea.right_affected.max(eb.right_affected).max(prev.edges.right_affected),
        };
        for (&lp, &lq) in a.values().iter().zip(b.values()) {
            let (lp, lq) = (lp.min(0.0), lq.min(0.0));
            if lq < -std::f64::consts::LN_2 {
                log_ph.push(log1m_exp(lq));
                log_qh.push(lq);
            } else {
                log_ph.push(lp);
                log_qh.push(log1m_exp(lp));
            }
        }
    }
    // p = p̂², 1 - p = q̂ (1 + p̂).
    let mut f: Vec<f64> = log_ph.iter().map(|&x| 2.0 * x).collect();
    let mut c: Vec<f64> = log_qh.iter().zip(&log_ph).map(|(&q, &p)| q + p.exp().ln_1p()).collect();
    let mut run = f64::NEG_INFINITY;
    for v in f.iter_mut().rev() {
        if *v < run {
            *v = run;
        }
        run = *v;
    }
    let mut run = f64::NEG_INFINITY;
    for v in c.iter_mut() {
        if *v < run {
            *v = run;
        }
        run = *v;
    }
    Ok(TailCurve {
        n: prev.n + 1,
        f: LogGridFunction::new(out, f)?,
        complement: LogGridFunction::new(out, c)?,
        edges,
    })
}

/// One generation on the same grid as `prev`.
pub fn tail_step(prev: &TailCurve) -> Result<TailCurve> {
    tail_step_onto(prev, *prev.grid())
}

/// Room kept below `-m(n)` for a table reaching depth `n_max`.
pub fn lower_margin(n_max: usize) -> f64 {
    25.0 + 2.5 * (n_max as f64).sqrt()
}

/// Where each depth's curve is tabulated: the window
/// `[-m(n) - below, -m(n) + above]`, snapped to a common lattice of spacing
/// `step`. The windows follow the minimum as it moves left with depth, and
/// consecutive windows differ by a whole number of cells.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailLattice {
    pub step: f64,
    pub below: f64,
    pub above: f64,
}

impl TailLattice {
    /// Windows for depths up to `n_max` and heights up to `u_max`.
    ///
    /// The lower side holds the leading edge of the minimum's law, which
    /// sets the speed of the whole front: cutting it at a fixed distance
    /// makes the centred curves drift (by ~1.6 in `ln p` at depth 256 with
    /// a 25-unit margin). The edge spreads diffusively, hence the `√n_max`
    /// term. Above `u_max` the window keeps 25 units for spine sites below
    /// the root value and 20 for right-edge contamination.
    pub fn for_heights(n_max: usize, u_max: f64, step: f64) -> Result<Self> {
        Self::new(step, lower_margin(n_max), u_max.max(0.0) + 45.0)
    }

    pub fn new(step: f64, below: f64, above: f64) -> Result<Self> {
        if !(step > 0.0) || !(below > 0.0) || !(above > 0.0) {
            return invalid(format!("bad tail lattice: step {step}, below {below}, above {above}"));
        }
        Ok(Self { step, below, above })
    }

    pub fn window(&self, n: usize) -> GridSpec {
        let m = m_value(n);
        let start = ((-m - self.below) / self.step).floor();
        let count = ((self.below + self.above) / self.step).ceil() as usize + 2;
        GridSpec::new(start * self.step, self.step, count).expect("valid lattice window")
    }
}

/// All curves `F_0..=F_{n_max}`, each on its own window.
#[derive(Debug, Clone)]
pub struct TailTable {
    lattice: TailLattice,
    curves: Vec<TailCurve>,
}

impl TailTable {
    pub fn build(n_max: usize, lattice: TailLattice) -> Result<Self> {
        let mut curves = Vec::with_capacity(n_max + 1);
        curves.push(TailCurve::root(lattice.window(0)));
        for n in 1..=n_max {
            let next = tail_step_onto(curves.last().unwrap(), lattice.window(n))?;
            curves.push(next);
        }
        Ok(Self { lattice, curves })
    }

    /// Table good for heights up to `u_max` at every depth.
    pub fn for_depth(n_max: usize, u_max: f64, step: f64) -> Result<Self> {
        Self::build(n_max, TailLattice::for_heights(n_max, u_max, step)?)
    }

    pub fn lattice(&self) -> &TailLattice {
        &self.lattice
    }

    pub fn step(&self) -> f64 {
        self.lattice.step
    }

    pub fn n_max(&self) -> usize {
        self.curves.len() - 1
    }

    pub fn curve(&self, n: usize) -> Result<&TailCurve> {
        self.curves.get(n).ok_or_else(|| {
            HardwallError::InvalidArgument(format!("depth {n} beyond table depth {}", self.n_max()))
        })
    }

    /// `F_n(v)` in absolute coordinates. Below the window the curve is flat
    /// at its left-edge value, which is checked to be within 1e-6 of 0.
    pub fn log_f(&self, n: usize, v: f64) -> Result<f64> {
        let c = self.curve(n)?;
        let g = c.grid();
        if v < g.lo() {
            let edge = c.f.values()[0];
            if edge < -LEFT_EDGE_TOLERANCE {
                return Err(HardwallError::OutOfGrid {
                    what: format!("F_{n} left of window with edge value {edge:e}"),
                    x: v,
                    lo: g.lo(),
                    hi: g.hi(),
                });
            }
            return Ok(edge);
        }
        c.f.eval_checked(v, &format!("F_{n}"))
    }

    /// `F_n(v)` anywhere: flat to the left of the window as in
    /// [`Self::log_f`], `-inf` to the right provided the curve has already
    /// fallen below `-RIGHT_EDGE_CUTOFF` at the edge.
    pub fn log_f_extended(&self, n: usize, v: f64) -> Result<f64> {
        let c = self.curve(n)?;
        let g = c.grid();
        if v > g.hi() {
            let edge = *c.f.values().last().expect("nonempty curve");
            if edge > -RIGHT_EDGE_CUTOFF {
                return Err(HardwallError::OutOfGrid {
                    what: format!("F_{n} right of window with edge value {edge:e}"),
                    x: v,
                    lo: g.lo(),
                    hi: g.hi(),
                });
            }
            return Ok(f64::NEG_INFINITY);
        }
        self.log_f(n, v)
    }

    /// `ln p_n(u)`. Errors outside the window instead of extrapolating.
    pub fn log_p(&self, n: usize, u: f64) -> Result<f64> {
        self.curve(n)?.f.eval_checked(-m_value(n) + u, &format!("p_{n}(u={u})"))
    }

    /// `ln q_n(u) = ln(1 - p_n(-u))`, read from the complement curve.
    pub fn log_q(&self, n: usize, u: f64) -> Result<f64> {
        self.curve(n)?.complement.eval_checked(-m_value(n) - u, &format!("q_{n}(u={u})"))
    }

    /// Central difference of `ln p_n` at `u` with one grid step.
    pub fn dlog_p(&self, n: usize, u: f64) -> Result<f64> {
        let h = self.step();
        let v = -m_value(n) + u;
        let c = &self.curve(n)?.f;
        let what = format!("dlog_p_{n}(u={u})");
        let a = c.eval_checked(v - h, &what)?;
        let b = c.eval_checked(v + h, &what)?;
        Ok((b - a) / (2.0 * h))
    }
}

/// The limit curve `ln p_inf(u)` on a u-grid, with the observed Cauchy gaps.
#[derive(Debug, Clone)]
pub struct PInfinity {
    pub n_max: usize,
    /// `ln p_{n_max}(u)` on the grid shifted by `m(n_max)`.
    pub curve: LogGridFunction,
    /// `(n, sup over the probe window of |p_{n} - p_{n-1}|)` for n = 1..=n_max.
    pub cauchy_gaps: Vec<(usize, f64)>,
    pub edges: EdgeReport,
}

/// Iterate the tail recursion to depth `n_max` on a grid covering
/// `u in [u_lo, u_hi]` at that depth. Convergence is measured in probability
/// on `[-5, 5]`; a final gap above `tol` is an error.
pub fn p_infinity(n_max: usize, u_lo: f64, u_hi: f64, step: f64, tol: f64) -> Result<PInfinity> {
    if n_max < 2 {
        return invalid("p_infinity needs n_max >= 2");
    }
    if !(u_hi > u_lo) {
        return invalid("p_infinity needs u_hi > u_lo");
    }
    let lattice = TailLattice::new(step, lower_margin(n_max).max(-u_lo + 1.0), u_hi.max(5.0) + 25.0)?;
    let probe: Vec<f64> = (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect();
    let mut cur = TailCurve::root(lattice.window(0));
    let mut prev_p: Option<Vec<f64>> = None;
    let mut gaps = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        cur = tail_step_onto(&cur, lattice.window(n))?;
        let mn = m_value(n);
        let p: Vec<f64> = probe
            .iter()
            .map(|&u| cur.f.eval(-mn + u).map(f64::exp).unwrap_or(f64::NAN))
            .collect();
        if let Some(pp) = &prev_p {
            let gap = p.iter().zip(pp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            gaps.push((n, gap));
        }
        prev_p = Some(p);
    }
    let last_gap = gaps.last().map(|g| g.1).unwrap_or(f64::INFINITY);
    if !(last_gap < tol) {
        return Err(HardwallError::NoConvergence { iterations: n_max, last_change: last_gap });
    }
    // Same values, read in the centered coordinate u = v + m(n_max).
    let ugrid = cur.grid().shifted(m_value(n_max));
    let keep_lo = ugrid.nearest(u_lo);
    let keep_hi = ugrid.nearest(u_hi);
    let sub = ugrid.slice(keep_lo, keep_hi)?;
    let curve = LogGridFunction::new(sub, cur.f.values()[keep_lo..=keep_hi].to_vec())?;
    Ok(PInfinity { n_max, curve, cauchy_gaps: gaps, edges: cur.edges })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaRow {
    pub u: f64,
    pub frac: f64,
    pub level: usize,
    pub reduced: f64,
    pub log_p: f64,
    pub dlog_p: f64,
    pub residual: f64,
    /// u above 2^√n, outside the range where the asymptotics are claimed.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaProfile {
    pub n: usize,
    pub rows: Vec<ThetaRow>,
    /// `-ln p_n(m(n))` for the hard wall itself.
    pub wall_neg_log_p: f64,
    /// `½ (m(n) - c0 log₂ n)²`, its leading order.
    pub wall_leading: f64,
}

impl ThetaProfile {
    /// Rows bucketed by the fractional part of log₂ u, rounded to `bins` buckets.
    pub fn grouped(&self, bins: usize) -> Vec<Vec<&ThetaRow>> {
        let mut out = vec![Vec::new(); bins];
        for r in &self.rows {
            let b = ((r.frac * bins as f64).round() as usize) % bins;
            out[b].push(r);
        }
        out
    }
}

/// Residuals `[-ln p_n(u) - u′²/2] / u` with `u′ = u - c0 ⌊log₂ u⌋`.
pub fn theta_profile(table: &TailTable, n: usize, us: &[f64]) -> Result<ThetaProfile> {
    let limit = 2f64.powf((n as f64).sqrt());
    let mut rows = Vec::with_capacity(us.len());
    for &u in us {
        if !(u > 0.0) {
            return invalid(format!("theta profile needs u > 0, got {u}"));
        }
        let log_p = table.log_p(n, u)?;
        let reduced = reduced_height(u);
        rows.push(ThetaRow {
            u,
            frac: frac_log2(u),
            level: level_of(u),
            reduced,
            log_p,
            dlog_p: table.dlog_p(n, u)?,
            residual: (-log_p - 0.5 * reduced * reduced) / u,
            out_of_range: u > limit,
        });
    }
    let mn = m_value(n);
    let lead = mn - C0 * (n as f64).log2();
    Ok(ThetaProfile {
        n,
        rows,
        wall_neg_log_p: -table.log_p(n, mn)?,
        wall_leading: 0.5 * lead * lead,
    })
}
