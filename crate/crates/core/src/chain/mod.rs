//! One-dimensional chains with Gaussian steps, reweighted by site potentials.
//!
//! The law of `(h(0) = start, h(1), ..., h(l))` is the Gaussian random walk
//! with step variance σ² tilted by `exp Σ_k λ_k(h(k))`. Everything here is
//! exact up to quadrature on one shared grid. Mass is confined to that grid:
//! every pass extends by `-inf` beyond its ends.

mod envelope;
mod sample;

pub use envelope::{
    check_growth, drift_envelope, envelope_line, envelope_violations, pinned_tail, DriftEnvelope, EnvelopeProbe,
    GrowthCheck, PinnedTail,
};
pub use sample::{trial_rng, CouplingReport, KernelSampler};

use serde::{Deserialize, Serialize};

use crate::convolve::{gaussian_expectation, log_convolve_gaussian, EdgeReport, Extension};
use crate::error::{invalid, HardwallError, Result};
use crate::grid::{GridSpec, LogGridFunction};
use crate::special::log_gauss;

/// Log-weight applied to the chain value at one site.
#[derive(Debug, Clone)]
pub struct SitePotential {
    pub site: usize,
    pub log_weight: LogGridFunction,
}

#[derive(Debug, Clone)]
pub struct ChainSpec {
    grid: GridSpec,
    start: f64,
    step_variance: f64,
    potentials: Vec<SitePotential>,
}

impl ChainSpec {
    /// `potentials[k-1]` acts on site `k`; the chain length is their number.
    pub fn new(grid: GridSpec, start: f64, step_variance: f64, potentials: Vec<LogGridFunction>) -> Result<Self> {
        if !(step_variance > 0.0) || !step_variance.is_finite() {
            return invalid(format!("step variance must be positive, got {step_variance}"));
        }
        if !start.is_finite() {
            return invalid("start value must be finite");
        }
        if potentials.is_empty() {
            return invalid("a chain needs at least one site");
        }
        let mut sites = Vec::with_capacity(potentials.len());
        for (i, p) in potentials.into_iter().enumerate() {
            if !p.grid().same_as(&grid) {
                return Err(HardwallError::GridMismatch(format!("potential at site {}", i + 1)));
            }
            if p.max_value() == f64::NEG_INFINITY {
                return Err(HardwallError::Precondition(format!("potential at site {} has no mass", i + 1)));
            }
            sites.push(SitePotential { site: i + 1, log_weight: p });
        }
        Ok(Self { grid, start, step_variance, potentials: sites })
    }

    /// Free walk of the given length.
    pub fn free(grid: GridSpec, length: usize, start: f64) -> Result<Self> {
        Self::new(grid, start, 1.0, vec![LogGridFunction::constant(grid, 0.0); length])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn start(&self) -> f64 {
        self.start
    }
    pub fn step_variance(&self) -> f64 {
        self.step_variance
    }
    pub fn length(&self) -> usize {
        self.potentials.len()
    }
    pub fn potentials(&self) -> &[SitePotential] {
        &self.potentials
    }
    /// Potential at site `k` (1-based).
    pub fn potential(&self, k: usize) -> &LogGridFunction {
        &self.potentials[k - 1].log_weight
    }
}

/// Per-site laws of the tilted chain. Site 0 is the point mass at `start`.
#[derive(Debug, Clone)]
pub struct ChainMarginals {
    pub start: f64,
    /// Normalised log-densities of sites `1..=l` (index `k-1`).
    pub densities: Vec<LogGridFunction>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub log_normalizer: f64,
}

impl ChainMarginals {
    pub fn mean(&self, k: usize) -> f64 {
        if k == 0 {
            self.start
        } else {
            self.means[k - 1]
        }
    }

    pub fn variance(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.variances[k - 1]
        }
    }

    pub fn density(&self, k: usize) -> &LogGridFunction {
        &self.densities[k - 1]
    }

    /// `ln P(h(k) > t)` and `ln P(h(k) < -t)`.
    pub fn log_tails(&self, k: usize, t: f64) -> (f64, f64) {
        let d = self.density(k);
        (d.log_mass_above(t), d.log_mass_below(-t))
    }
}

/// Conditional law of the next value.
#[derive(Debug, Clone)]
pub struct StepKernel {
    pub site: usize,
    pub from: f64,
    pub log_density: LogGridFunction,
}

/// Forward and backward messages of a chain, kept for kernels and covariances.
#[derive(Debug, Clone)]
pub struct SolvedChain {
    spec: ChainSpec,
    /// `α_k`, k = 1..=l: log mass of paths up to k ending at the value.
    forward: Vec<LogGridFunction>,
    /// `β_k`, k = 1..=l: log mass of continuations from the value at k.
    backward: Vec<LogGridFunction>,
    marginals: ChainMarginals,
    pub edges: EdgeReport,
}

/// Marginals only.
pub fn forward_backward(spec: &ChainSpec) -> Result<ChainMarginals> {
    Ok(SolvedChain::solve(spec.clone())?.marginals)
}

/// `Cov(h(k), h(k′))` under the tilted chain.
pub fn pair_covariance(spec: &ChainSpec, k: usize, k2: usize) -> Result<f64> {
    SolvedChain::solve(spec.clone())?.pair_covariance(k, k2)
}

pub fn step_kernel(spec: &ChainSpec, k: usize, v: f64) -> Result<StepKernel> {
    SolvedChain::solve(spec.clone())?.step_kernel(k, v)
}

pub fn tv_curve(spec: &ChainSpec, k0: usize, v: f64, v2: f64, horizon: usize) -> Result<Vec<f64>> {
    SolvedChain::solve(spec.clone())?.tv_curve(k0, v, v2, horizon)
}

impl SolvedChain {
    pub fn solve(spec: ChainSpec) -> Result<Self> {
        let l = spec.length();
        let grid = spec.grid;
        let var = spec.step_variance;
        let ninf = Extension::NegInfinity;
        let mut edges = EdgeReport::default();

        let mut forward: Vec<LogGridFunction> = Vec::with_capacity(l);
        let first = LogGridFunction::from_fn(grid, |w| log_gauss(w - spec.start, var))?.add(spec.potential(1))?;
        forward.push(first);
        for k in 2..=l {
            let (c, e) = log_convolve_gaussian(&forward[k - 2], var, ninf, ninf)?;
            edges = edges.merge(e);
            forward.push(c.add(spec.potential(k))?);
        }
        for (i, a) in forward.iter().enumerate() {
            if a.max_value() == f64::NEG_INFINITY {
                return Err(HardwallError::Precondition(format!("infeasible chain: no mass at site {}", i + 1)));
            }
        }

        let mut backward = vec![LogGridFunction::constant(grid, 0.0); l];
        for k in (1..l).rev() {
            let w = spec.potential(k + 1).add(&backward[k])?;
            let (c, e) = log_convolve_gaussian(&w, var, ninf, ninf)?;
            edges = edges.merge(e);
            backward[k - 1] = c;
        }

        let log_normalizer = forward[l - 1].log_integral();
        let mut densities = Vec::with_capacity(l);
        let mut means = Vec::with_capacity(l);
        let mut variances = Vec::with_capacity(l);
        for k in 0..l {
            let (d, _) = forward[k].add(&backward[k])?.normalized()?;
            let (m, v) = d.moments();
            densities.push(d);
            means.push(m);
            variances.push(v.max(0.0));
        }
        let marginals = ChainMarginals { start: spec.start, densities, means, variances, log_normalizer };
        Ok(Self { spec, forward, backward, marginals, edges })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn marginals(&self) -> &ChainMarginals {
        &self.marginals
    }

    pub fn into_marginals(self) -> ChainMarginals {
        self.marginals
    }

    pub fn forward(&self, k: usize) -> &LogGridFunction {
        &self.forward[k - 1]
    }

    pub fn backward(&self, k: usize) -> &LogGridFunction {
        &self.backward[k - 1]
    }

    /// Log-weight of arriving at site `k+1` with a given value: `λ_{k+1} + β_{k+1}`.
    pub fn arrival_weight(&self, k: usize) -> Result<LogGridFunction> {
        let l = self.spec.length();
        if k >= l {
            return invalid(format!("no step out of site {k} in a chain of length {l}"));
        }
        self.spec.potential(k + 1).add(&self.backward[k])
    }

    /// Law of `h(k+1)` given `h(k) = v`.
    pub fn step_kernel(&self, k: usize, v: f64) -> Result<StepKernel> {
        let w = self.arrival_weight(k)?;
        let var = self.spec.step_variance;
        let raw = w.map(|u, lw| lw + log_gauss(u - v, var))?;
        if raw.max_value() == f64::NEG_INFINITY {
            return Err(HardwallError::Precondition(format!("conditioning value {v} at site {k} is infeasible")));
        }
        let (log_density, _) = raw.normalized()?;
        Ok(StepKernel { site: k, from: v, log_density })
    }

    /// `E[f(h(k2)) | h(k) = v]` at every grid value `v`, for `k <= k2`.
    /// `values` holds `f` on the grid.
    pub fn conditional_expectation(&self, k: usize, k2: usize, values: &[f64]) -> Result<Vec<f64>> {
        let l = self.spec.length();
        if k > k2 || k2 > l || k == 0 {
            return invalid(format!("need 1 <= k <= k2 <= {l} (k={k}, k2={k2})"));
        }
        let mut g = values.to_vec();
        for j in (k..k2).rev() {
            let w = self.arrival_weight(j)?;
            let (_, mean) = gaussian_expectation(
                &w,
                &g,
                self.spec.step_variance,
                Extension::NegInfinity,
                Extension::NegInfinity,
            )?;
            g = mean;
        }
        Ok(g)
    }

    /// `Cov(h(k), h(k2))`, by pushing `h(k2)` back to site `k` through the kernels.
    pub fn pair_covariance(&self, k: usize, k2: usize) -> Result<f64> {
        let (k, k2) = if k <= k2 { (k, k2) } else { (k2, k) };
        let l = self.spec.length();
        if k2 > l {
            return invalid(format!("site {k2} beyond chain length {l}"));
        }
        if k == 0 {
            return Ok(0.0);
        }
        let m = &self.marginals;
        if k == k2 {
            return Ok(m.variance(k));
        }
        let xs: Vec<f64> = self.spec.grid.points().collect();
        let g = self.conditional_expectation(k, k2, &xs)?;
        let (mk, mk2) = (m.mean(k), m.mean(k2));
        Ok(m.density(k).expect(|i, x| (x - mk) * (g[i] - mk2)))
    }

    /// Total variation between the laws of `h(k0 + j)` started from `v` and
    /// from `v2` at site `k0`, for `j = 1..=horizon`.
    pub fn tv_curve(&self, k0: usize, v: f64, v2: f64, horizon: usize) -> Result<Vec<f64>> {
        let l = self.spec.length();
        if k0 + horizon > l {
            return invalid(format!("horizon {horizon} from site {k0} runs past length {l}"));
        }
        if horizon == 0 {
            return Ok(Vec::new());
        }
        let mut p = self.step_kernel(k0, v)?.log_density;
        let mut q = self.step_kernel(k0, v2)?.log_density;
        let mut out = Vec::with_capacity(horizon);
        out.push(total_variation(&p, &q));
        for j in 1..horizon {
            let site = k0 + j;
            p = self.push(&p, site)?;
            q = self.push(&q, site)?;
            out.push(total_variation(&p, &q));
        }
        Ok(out)
    }

    /// Push a normalised density at `site` one step forward.
    pub fn push(&self, density: &LogGridFunction, site: usize) -> Result<LogGridFunction> {
        let ninf = Extension::NegInfinity;
        let beta = self.backward[site - 1].values();
        let src: Vec<f64> = density
            .values()
            .iter()
            .zip(beta)
            .map(|(&d, &b)| if d == f64::NEG_INFINITY || b == f64::NEG_INFINITY { f64::NEG_INFINITY } else { d - b })
            .collect();
        let src = LogGridFunction::new(*density.grid(), src)?;
        let (c, _) = log_convolve_gaussian(&src, self.spec.step_variance, ninf, ninf)?;
        let next = c.add(&self.arrival_weight(site)?)?;
        Ok(next.normalized()?.0)
    }
}

/// ½ ∫ |p - q| for two normalised log-densities on one grid.
pub fn total_variation(p: &LogGridFunction, q: &LogGridFunction) -> f64 {
    let g = p.grid();
    let s: f64 = p
        .values()
        .iter()
        .zip(q.values())
        .enumerate()
        .map(|(i, (&a, &b))| g.weight(i) * (a.exp() - b.exp()).abs())
        .sum();
    (0.5 * s).clamp(0.0, 1.0)
}

/// Summary row of a chain solve, for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site: usize,
    pub mean: f64,
    pub variance: f64,
}

impl ChainMarginals {
    pub fn summary(&self) -> Vec<SiteSummary> {
        (0..=self.means.len())
            .map(|k| SiteSummary { site: k, mean: self.mean(k), variance: self.variance(k) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::covering(-25.0, 25.0, 0.02).unwrap()
    }

    #[test]
    fn free_walk_marginals() {
        let s = ChainSpec::free(grid(), 6, 0.0).unwrap();
        let m = forward_backward(&s).unwrap();
        for k in 1..=6 {
            assert!(m.mean(k).abs() < 1e-8);
            assert!((m.variance(k) / k as f64 - 1.0).abs() < 1e-6, "k={k} var={}", m.variance(k));
        }
    }

    #[test]
    fn free_walk_covariance() {
        let sc = SolvedChain::solve(ChainSpec::free(grid(), 5, 0.0).unwrap()).unwrap();
        assert!((sc.pair_covariance(2, 5).unwrap() - 2.0).abs() < 1e-6);
        assert_eq!(sc.pair_covariance(0, 3).unwrap(), 0.0);
        assert_eq!(sc.pair_covariance(3, 3).unwrap(), sc.marginals().variance(3));
    }

    #[test]
    fn identical_starts_have_zero_tv() {
        let g = grid();
        let pot = LogGridFunction::from_fn(g, |w| -0.25 * w * w).unwrap();
        let sc = SolvedChain::solve(ChainSpec::new(g, 0.0, 1.0, vec![pot; 8]).unwrap()).unwrap();
        assert!(sc.tv_curve(0, 1.5, 1.5, 8).unwrap().iter().all(|&t| t == 0.0));
        let a = sc.tv_curve(0, 3.0, -2.0, 8).unwrap();
        let b = sc.tv_curve(0, -2.0, 3.0, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
        for w in a.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let g = grid();
        assert!(ChainSpec::new(g, 0.0, 0.0, vec![LogGridFunction::constant(g, 0.0)]).is_err());
        assert!(ChainSpec::new(g, 0.0, 1.0, vec![]).is_err());
        assert!(ChainSpec::new(g, 0.0, 1.0, vec![LogGridFunction::constant(g, f64::NEG_INFINITY)]).is_err());
        // Two walls that no path can satisfy at once.
        let a = LogGridFunction::indicator_at_least(g, 20.0);
        let b = LogGridFunction::indicator_at_most(g, -20.0);
        let s = ChainSpec::new(g, 0.0, 1.0, vec![a, b]).unwrap();
        assert!(forward_backward(&s).is_err() || forward_backward(&s).unwrap().log_normalizer < -300.0);
    }
}
