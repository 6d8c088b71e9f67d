//! Exact path draws and coupled pairs for a solved chain.
//!
//! A draw from a step kernel picks a grid cell with its trapezoid mass and
//! then a uniform point inside the cell. Each kernel is only evaluated on
//! the union of a window around the current value and a window around the
//! kernel's mode, found from an upper hull of the arrival weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SolvedChain;
use crate::error::{invalid, HardwallError, Result};
use crate::fit::{fit_line, LineFit};
use crate::grid::GridSpec;

/// Half-width of the evaluation windows, in kernel standard deviations.
const WINDOW_SIGMAS: f64 = 8.0;
/// Kernel terms this far below the maximum carry no mass.
const NEGLIGIBLE: f64 = 40.0;

/// RNG for one trial of a seeded experiment: one ChaCha stream per trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(trial);
    r
}

struct SiteTable {
    /// Arrival log-weight of the next site.
    weight: Vec<f64>,
    /// Upper hull of `(j, weight_j - c j²)` as `(j, value)`.
    hull: Vec<(usize, f64)>,
}

/// Draws paths and kernel samples from a solved chain.
pub struct KernelSampler<'a> {
    chain: &'a SolvedChain,
    grid: GridSpec,
    variance: f64,
    half_width: usize,
    sites: Vec<SiteTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingReport {
    pub trials: usize,
    pub horizon: usize,
    pub threshold: f64,
    /// `P(τ > k)` for `k = 0..=horizon`.
    pub tail: Vec<f64>,
    /// Trials that had not met by the horizon.
    pub censored: usize,
    pub mean_overlap: f64,
    /// Fit of `ln P(τ > k)` against `k` over the decaying part of the tail.
    pub fit: LineFit,
}

impl<'a> KernelSampler<'a> {
    pub fn new(chain: &'a SolvedChain) -> Result<Self> {
        let spec = chain.spec();
        let grid = *spec.grid();
        let variance = spec.step_variance();
        let h = grid.step();
        let c = h * h / (2.0 * variance);
        let mut sites = Vec::with_capacity(spec.length());
        for k in 0..spec.length() {
            let weight = chain.arrival_weight(k)?.into_values();
            let mut hull: Vec<(usize, f64)> = Vec::new();
            for (j, &wj) in weight.iter().enumerate() {
                if !wj.is_finite() {
                    continue;
                }
                let p = (j, wj - c * (j * j) as f64);
                while hull.len() >= 2 {
                    let a = hull[hull.len() - 2];
                    let b = hull[hull.len() - 1];
                    if (b.1 - a.1) * (p.0 - a.0) as f64 <= (p.1 - a.1) * (b.0 - a.0) as f64 {
                        hull.pop();
                    } else {
                        break;
                    }
                }
                hull.push(p);
            }
            if hull.is_empty() {
                return Err(HardwallError::Precondition(format!("no reachable value at site {}", k + 1)));
            }
            sites.push(SiteTable { weight, hull });
        }
        let half_width = (WINDOW_SIGMAS * variance.sqrt() / h).ceil() as usize;
        Ok(Self { chain, grid, variance, half_width, sites })
    }

    pub fn chain(&self) -> &SolvedChain {
        self.chain
    }

    /// Grid index of the kernel mode from `v` at site `k`.
    fn mode_index(&self, k: usize, v: f64) -> usize {
        let hull = &self.sites[k].hull;
        let h = self.grid.step();
        // Maximise value_j + t j with t = 2c·(v - lo)/h; slopes along the hull decrease.
        let t = h * (v - self.grid.lo()) / self.variance;
        let score = |i: usize| hull[i].1 + t * hull[i].0 as f64;
        let (mut lo, mut hi) = (0usize, hull.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if score(mid + 1) >= score(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        hull[lo].0
    }

    /// Index range on which the kernel from `v` at site `k` carries its mass.
    fn window(&self, k: usize, v: f64) -> (usize, usize) {
        let n = self.grid.count();
        let centre = self.grid.nearest(v.clamp(self.grid.lo(), self.grid.hi()));
        let mode = self.mode_index(k, v);
        let (a, b) = (centre.min(mode), centre.max(mode));
        (a.saturating_sub(self.half_width), (b + self.half_width).min(n - 1))
    }

    /// Unnormalised cell masses of the kernel from `v` at site `k` on `[a, b]`.
    fn kernel_masses(&self, k: usize, v: f64, a: usize, b: usize, out: &mut Vec<f64>) {
        let w = &self.sites[k].weight;
        out.clear();
        let inv = 1.0 / (2.0 * self.variance);
        let mut best = f64::NEG_INFINITY;
        for j in a..=b {
            let d = self.grid.point(j) - v;
            let t = w[j] - d * d * inv;
            best = best.max(t);
            out.push(t);
        }
        for (i, t) in out.iter_mut().enumerate() {
            let x = *t - best;
            *t = if x < -NEGLIGIBLE || best == f64::NEG_INFINITY { 0.0 } else { self.grid.weight(a + i) * x.exp() };
        }
    }

    fn draw_from_masses<R: Rng>(&self, masses: &[f64], a: usize, rng: &mut R) -> f64 {
        let total: f64 = masses.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = masses.len() - 1;
        for (i, &m) in masses.iter().enumerate() {
            acc += m;
            if acc > target && m > 0.0 {
                pick = i;
                break;
            }
        }
        self.jitter(a + pick, rng)
    }

    fn jitter<R: Rng>(&self, j: usize, rng: &mut R) -> f64 {
        let h = self.grid.step();
        let x = self.grid.point(j) + (rng.random::<f64>() - 0.5) * h;
        x.clamp(self.grid.lo(), self.grid.hi())
    }

    /// One draw of `h(k+1)` given `h(k) = v`.
    pub fn step<R: Rng>(&self, k: usize, v: f64, rng: &mut R) -> f64 {
        let (a, b) = self.window(k, v);
        let mut m = Vec::with_capacity(b - a + 1);
        self.kernel_masses(k, v, a, b, &mut m);
        self.draw_from_masses(&m, a, rng)
    }

    /// A full path `h(0..=l)` from the chain's start value.
    pub fn path<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let l = self.sites.len();
        let mut path = Vec::with_capacity(l + 1);
        let mut v = self.chain.spec().start();
        path.push(v);
        let mut buf = Vec::new();
        for k in 0..l {
            let (a, b) = self.window(k, v);
            self.kernel_masses(k, v, a, b, &mut buf);
            v = self.draw_from_masses(&buf, a, rng);
            path.push(v);
        }
        path
    }

    /// `count` paths, path `i` from stream `i` of `seed`.
    pub fn paths(&self, seed: u64, count: usize) -> Vec<Vec<f64>> {
        (0..count).into_par_iter().map(|i| self.path(&mut trial_rng(seed, i as u64))).collect()
    }

    /// One coupled step. Returns the two next values and the overlap mass
    /// used (1 when already met, 0 when moved independently).
    fn coupled_step<R: Rng>(&self, k: usize, x: f64, y: f64, w: f64, rng: &mut R) -> (f64, f64, f64) {
        if x == y {
            let z = self.step(k, x, rng);
            return (z, z, 1.0);
        }
        if x.abs() > w || y.abs() > w {
            return (self.step(k, x, rng), self.step(k, y, rng), 0.0);
        }
        let (a1, b1) = self.window(k, x);
        let (a2, b2) = self.window(k, y);
        let (a, b) = (a1.min(a2), b1.max(b2));
        let (mut p, mut q) = (Vec::new(), Vec::new());
        self.kernel_masses(k, x, a, b, &mut p);
        self.kernel_masses(k, y, a, b, &mut q);
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter_mut().for_each(|m| *m /= sp);
        q.iter_mut().for_each(|m| *m /= sq);
        let common: Vec<f64> = p.iter().zip(&q).map(|(s, t)| s.min(*t)).collect();
        let overlap: f64 = common.iter().sum();
        if rng.random::<f64>() < overlap {
            let z = self.draw_from_masses(&common, a, rng);
            (z, z, overlap)
        } else {
            let rp: Vec<f64> = p.iter().zip(&common).map(|(s, c)| (s - c).max(0.0)).collect();
            let rq: Vec<f64> = q.iter().zip(&common).map(|(s, c)| (s - c).max(0.0)).collect();
            (self.draw_from_masses(&rp, a, rng), self.draw_from_masses(&rq, a, rng), overlap)
        }
    }

    /// Meeting time of two chains started at `v` and `v2` at site 0.
    /// Returns `None` if they have not met by the end of the chain.
    pub fn meeting_time<R: Rng>(&self, v: f64, v2: f64, w: f64, rng: &mut R) -> (Option<usize>, f64) {
        if v == v2 {
            return (Some(0), 1.0);
        }
        let (mut x, mut y) = (v, v2);
        let mut overlap_sum = 0.0;
        for k in 0..self.sites.len() {
            let (nx, ny, o) = self.coupled_step(k, x, y, w, rng);
            overlap_sum += o;
            x = nx;
            y = ny;
            if x == y {
                return (Some(k + 1), overlap_sum / (k + 1) as f64);
            }
        }
        (None, overlap_sum / self.sites.len().max(1) as f64)
    }

    pub fn coupling_experiment(&self, v: f64, v2: f64, w: f64, trials: usize, seed: u64) -> Result<CouplingReport> {
        if !(w > 0.0) {
            return invalid(format!("coupling threshold must be positive, got {w}"));
        }
        if trials == 0 {
            return invalid("need at least one trial");
        }
        let horizon = self.sites.len();
        let runs: Vec<(Option<usize>, f64)> = (0..trials)
            .into_par_iter()
            .map(|i| self.meeting_time(v, v2, w, &mut trial_rng(seed, i as u64)))
            .collect();
        let mut tail = vec![0.0; horizon + 1];
        let mut censored = 0;
        for (t, _) in &runs {
            let t = match t {
                Some(t) => *t,
                None => {
                    censored += 1;
                    horizon + 1
                }
            };
            for slot in tail.iter_mut().take(t) {
                *slot += 1.0;
            }
        }
        tail.iter_mut().for_each(|s| *s /= trials as f64);
        let mean_overlap = runs.iter().map(|r| r.1).sum::<f64>() / trials as f64;
        // Fit once the tail has started to fall, while it is still resolved.
        let start = tail.iter().position(|&p| p < 1.0).unwrap_or(horizon + 1);
        let (ks, ls): (Vec<f64>, Vec<f64>) = (start..=horizon)
            .filter(|&k| tail[k] * trials as f64 >= 10.0)
            .map(|k| (k as f64, tail[k].ln()))
            .unzip();
        let fit = fit_line(&ks, &ls);
        Ok(CouplingReport { trials, horizon, threshold: w, tail, censored, mean_overlap, fit })
    }
}
