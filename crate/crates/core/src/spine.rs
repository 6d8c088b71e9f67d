//! The field along one root-to-depth-l branch, conditioned on every leaf
//! staying above `-m(n) + u`.
//!
//! Given the branch values, the subtrees hanging off it are independent, so
//! the branch is a Gaussian walk reweighted at site `k` by
//! `((1 + [k = l]) / 2) · F_{n-k}(u - m(n) - w)`: one half-tree hangs off
//! every inner site and two off the last one.

use serde::{Deserialize, Serialize};

use crate::chain::{ChainMarginals, ChainSpec, SolvedChain};
use crate::error::{invalid, HardwallError, Result};
use crate::fit::{fit_line, LineFit};
use crate::grid::{GridSpec, LogGridFunction};
use crate::model::{conditional_center, level_of, m_value, reduced_height};
use crate::tails::TailTable;

/// Default gap between the branch length and the localisation level `l_u`.
pub const DEFAULT_LEVEL_GAP: usize = 3;

/// The branch law as a chain, with the quantities of its recentering.
#[derive(Debug, Clone)]
pub struct SpineSetup {
    pub n: usize,
    pub l: usize,
    pub u: f64,
    /// `⌊log₂ u⌋`, zero below 2.
    pub level: usize,
    /// `u - c0·level`.
    pub u_reduced: f64,
    /// `(1 - 2^{-k}) · u_reduced` for `k = 0..=l`.
    pub tilt: Vec<f64>,
    pub spec: ChainSpec,
}

/// The branch in coordinates `Y_k = h_k - tilt_k`, as a driftless chain.
#[derive(Debug, Clone)]
pub struct RecenteredSpine {
    pub setup: SpineSetup,
    pub spec: ChainSpec,
}

/// Range of branch values worth tabulating for `(n, l, u)`.
pub fn spine_range(n: usize, l: usize, u: f64) -> (f64, f64) {
    let spread = 8.0 * (l.max(1) as f64).sqrt() + 10.0;
    let wall = u - m_value(n);
    (wall.min(0.0) - spread, u.max(0.0) + spread)
}

/// Grid for the branch on the reflected tail lattice: `w = (u - m(n)) - v`
/// with `v` a tail-lattice point, so the potentials are read at grid points.
pub fn spine_grid(table: &TailTable, n: usize, l: usize, u: f64) -> Result<GridSpec> {
    let (lo, hi) = spine_range(n, l, u);
    let h = table.step();
    let anchor = u - m_value(n);
    let first = ((lo - anchor) / h).floor();
    let count = ((hi - lo) / h).ceil() as usize + 2;
    GridSpec::new(anchor + first * h, h, count)
}

fn check_depths(table: &TailTable, n: usize, l: usize) -> Result<()> {
    if l == 0 || l > n {
        return invalid(format!("branch length must be in 1..={n}, got {l}"));
    }
    if table.n_max() < n - 1 {
        return Err(HardwallError::InvalidArgument(format!(
            "tail table reaches depth {} but the branch needs {}",
            table.n_max(),
            n - 1
        )));
    }
    Ok(())
}

/// Site-`k` log-weight at the values `w` of `grid`, each shifted by `shift`.
fn site_weight(table: &TailTable, n: usize, l: usize, u: f64, k: usize, grid: GridSpec, shift: f64) -> Result<LogGridFunction> {
    let wall = u - m_value(n);
    if k == n {
        // A leaf: hard constraint w >= u - m(n), cell-averaged.
        return Ok(LogGridFunction::indicator_at_least(grid, wall - shift));
    }
    let factor = if k == l { 1.0 } else { 0.5 };
    let values = grid
        .points()
        .map(|y| table.log_f_extended(n - k, wall - (y + shift)).map(|f| factor * f))
        .collect::<Result<Vec<f64>>>()?;
    LogGridFunction::new(grid, values)
}

fn tilt_of(u: f64, l: usize) -> (usize, f64, Vec<f64>) {
    let level = level_of(u);
    let ur = reduced_height(u);
    let tilt = (0..=l).map(|k| (1.0 - 0.5f64.powi(k as i32)) * ur).collect();
    (level, ur, tilt)
}

/// Branch of length `l` under `Ω_n(u)` on its default grid.
pub fn build_spine(table: &TailTable, n: usize, l: usize, u: f64) -> Result<SpineSetup> {
    check_depths(table, n, l)?;
    build_spine_on(table, n, l, u, spine_grid(table, n, l, u)?)
}

/// Branch of length `l` under `Ω_n(u)` on a caller-chosen grid.
pub fn build_spine_on(table: &TailTable, n: usize, l: usize, u: f64, grid: GridSpec) -> Result<SpineSetup> {
    check_depths(table, n, l)?;
    if !u.is_finite() {
        return invalid("threshold must be finite");
    }
    let pots = (1..=l).map(|k| site_weight(table, n, l, u, k, grid, 0.0)).collect::<Result<Vec<_>>>()?;
    let spec = ChainSpec::new(grid, 0.0, 1.0, pots)?;
    let (level, u_reduced, tilt) = tilt_of(u, l);
    Ok(SpineSetup { n, l, u, level, u_reduced, tilt, spec })
}

/// Recentered branch; refuses unless `l <= l_u - gap`, the range where the
/// recentered walk is known to be localised.
pub fn recenter(table: &TailTable, setup: &SpineSetup, gap: usize) -> Result<RecenteredSpine> {
    if setup.l + gap > setup.level {
        return Err(HardwallError::Precondition(format!(
            "recentering needs l <= floor(log2 u) - {gap}; got l = {}, floor(log2 u) = {}",
            setup.l, setup.level
        )));
    }
    recenter_unchecked(table, setup)
}

/// Recentered branch without the localisation range check.
///
/// With `δ_k = 2^{-k-1}·u_reduced` the drifted steps turn into driftless
/// ones at the cost of a linear weight `-δ_k·y` at every inner site and
/// `-δ_{l-1}·y` at the last.
pub fn recenter_unchecked(table: &TailTable, setup: &SpineSetup) -> Result<RecenteredSpine> {
    let (n, l, u) = (setup.n, setup.l, setup.u);
    let h = table.step();
    let half = 8.0 * (l as f64).sqrt() + 20.0;
    let count = (2.0 * half / h).ceil() as usize + 1;
    let grid = GridSpec::new(-((count / 2) as f64) * h, h, count)?;
    let mut pots = Vec::with_capacity(l);
    for k in 1..=l {
        let pull = if k < l { 0.5f64.powi(k as i32 + 1) } else { 0.5f64.powi(l as i32) } * setup.u_reduced;
        let w = site_weight(table, n, l, u, k, grid, setup.tilt[k])?;
        pots.push(w.map(|y, f| if f == f64::NEG_INFINITY { f } else { f - pull * y })?);
    }
    let spec = ChainSpec::new(grid, 0.0, 1.0, pots)?;
    Ok(RecenteredSpine { setup: setup.clone(), spec })
}

impl RecenteredSpine {
    /// `f_k = -(site-k log-weight)`, shifted to vanish at its minimum.
    pub fn potential(&self, k: usize) -> Vec<f64> {
        let p = self.spec.potential(k);
        let top = p.max_value();
        p.values().iter().map(|&x| top - x).collect()
    }

    /// Fit `c, C` with
    /// `c·r(s) - C <= sgn(s)·f_k'(s) <= C·r(s) + C`, `r(s) = |s| - (s - 2^{-k-1}u')⁺`,
    /// over the grid points where `f_k` is finite and below `cap`.
    pub fn potential_envelope(&self, k: usize, cap: f64) -> PotentialEnvelope {
        let f = self.potential(k);
        let g = self.spec.grid();
        let h = g.step();
        let kink = 0.5f64.powi(k as i32 + 1) * self.setup.u_reduced;
        let mut pts = Vec::new();
        for i in 1..f.len() - 1 {
            if !(f[i - 1] < cap && f[i] < cap && f[i + 1] < cap) {
                continue;
            }
            let s = g.point(i);
            let slope = (f[i + 1] - f[i - 1]) / (2.0 * h);
            let r = s.abs() - (s - kink).max(0.0);
            pts.push((r, s.signum() * slope));
        }
        let upper = pts.iter().map(|&(r, y)| y / (r + 1.0)).fold(0.0, f64::max);
        let far: Vec<f64> = pts.iter().filter(|p| p.0 >= 4.0).map(|&(r, y)| y / r).collect();
        let lower = 0.5 * far.iter().copied().fold(f64::INFINITY, f64::min);
        let lower = if lower.is_finite() { lower } else { f64::NAN };
        let big_c = pts.iter().map(|&(r, y)| lower * r - y).fold(upper, f64::max);
        PotentialEnvelope { site: k, lower_slope: lower, constant: big_c, points: pts.len() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialEnvelope {
    pub site: usize,
    /// Fitted `c`; positive iff the potential confines on both sides.
    pub lower_slope: f64,
    /// Fitted `C`.
    pub constant: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileRow {
    pub k: usize,
    pub mean: f64,
    pub variance: f64,
    /// `m(n′)(1 - 2^{-k})` before depth `l_n`, `m(n′)` after.
    pub center: f64,
}

/// `E[h([x]_k) | Ω_n(u)]` and variances for `k = 0..=l`.
pub fn conditional_mean_profile(table: &TailTable, n: usize, u: f64, l: usize) -> Result<Vec<ProfileRow>> {
    let s = build_spine(table, n, l, u)?;
    let m = SolvedChain::solve(s.spec)?.into_marginals();
    Ok((0..=l)
        .map(|k| ProfileRow { k, mean: m.mean(k), variance: m.variance(k), center: conditional_center(n, k) })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub n: usize,
    pub u: f64,
    pub level: usize,
    pub minus_dlog_p: f64,
    pub scaled_mean: f64,
    pub residual: f64,
}

/// `-d/du ln p_n(u)` against `E[h(x) | Ω_n(u)] / (1 - 2^{-k})` at depth `k = l_u`.
/// The two agree exactly by Gaussian integration by parts over depth `k`.
pub fn derivative_identity_check(table: &TailTable, n: usize, u: f64) -> Result<DerivativeCheck> {
    let k = level_of(u).clamp(1, n);
    let s = build_spine(table, n, k, u)?;
    let m = SolvedChain::solve(s.spec)?.into_marginals();
    let scaled_mean = m.mean(k) / (1.0 - 0.5f64.powi(k as i32));
    let minus_dlog_p = -table.dlog_p(n, u)?;
    Ok(DerivativeCheck { n, u, level: k, minus_dlog_p, scaled_mean, residual: (minus_dlog_p - scaled_mean).abs() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationTails {
    pub n: usize,
    pub depth: usize,
    pub center: f64,
    /// `(u_dev, ln P⁺(ĥ > u_dev), ln P⁺(ĥ < -u_dev))`.
    pub rows: Vec<(f64, f64, f64)>,
}

/// Tails of `ĥ(x) = h(x) - μ_n(x)` under the hard wall `u = m(n)`, read off
/// the marginal at the last site of a branch of length `depth`.
pub fn hat_h_tails(table: &TailTable, n: usize, depth: usize, u_devs: &[f64]) -> Result<DeviationTails> {
    let u = m_value(n);
    let s = build_spine(table, n, depth, u)?;
    let m = SolvedChain::solve(s.spec)?.into_marginals();
    Ok(deviation_tails(&m, n, depth, u_devs))
}

pub fn deviation_tails(m: &ChainMarginals, n: usize, depth: usize, u_devs: &[f64]) -> DeviationTails {
    let center = conditional_center(n, depth);
    let d = m.density(depth);
    let rows = u_devs
        .iter()
        .map(|&t| (t, d.log_mass_above(center + t), d.log_mass_below(center - t)))
        .collect();
    DeviationTails { n, depth, center, rows }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeCovariance {
    pub n: usize,
    pub depth_meet: usize,
    pub covariance: f64,
}

/// `Cov⁺(h(x), h(y))` for leaves meeting at each depth in `depths`.
///
/// Below the meeting vertex the two leaves sit in independent subtrees, so
/// the covariance is the variance, over the branch marginal at the meeting
/// depth, of the conditional leaf mean given the value there.
pub fn pair_covariance_tree(table: &TailTable, n: usize, depths: &[usize]) -> Result<Vec<TreeCovariance>> {
    let u = m_value(n);
    let s = build_spine(table, n, n, u)?;
    let sc = SolvedChain::solve(s.spec)?;
    let xs: Vec<f64> = sc.spec().grid().points().collect();
    let mut order: Vec<usize> = depths.to_vec();
    order.sort_unstable_by(|a, b| b.cmp(a));
    order.dedup();
    if let Some(&d) = order.first() {
        if d > n {
            return invalid(format!("meeting depth {d} exceeds n = {n}"));
        }
    }
    // Walk the conditional leaf mean back from the leaves, stopping at each requested depth.
    let mut g = xs.clone();
    let mut at = n;
    let mut found = std::collections::BTreeMap::new();
    for &d in &order {
        if d == 0 {
            found.insert(0, 0.0);
            continue;
        }
        if d < at {
            g = sc.conditional_expectation(d, at, &g)?;
            at = d;
        }
        let marg = sc.marginals();
        let dens = marg.density(d);
        let mean = dens.expect(|i, _| g[i]);
        found.insert(d, dens.expect(|i, _| (g[i] - mean).powi(2)));
    }
    Ok(depths.iter().map(|&d| TreeCovariance { n, depth_meet: d, covariance: found[&d] }).collect())
}

/// Fit of a decay in log scale over the given `(x, y)` points.
pub fn log_fit(points: &[(f64, f64)]) -> LineFit {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x, y.abs().ln())).unzip();
    fit_line(&x, &y)
}

