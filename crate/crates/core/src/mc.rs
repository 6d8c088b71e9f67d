//! Monte Carlo on the full binary tree, plain and with a Cameron–Martin tilt.
//!
//! Trees are stored in heap order (root 0, children `2i+1`, `2i+2`). Trial
//! `i` of a seeded run always uses ChaCha stream `i`, so results do not
//! depend on how trials are spread over threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::chain::trial_rng;
use crate::error::{invalid, Result};
use crate::model::{dirichlet_energy, harmonic_profile, heap, level_of, m_value, reduced_height};

/// Largest tree depth that may be materialised.
pub const MAX_TREE_DEPTH: usize = 24;
/// Below this effective sample size a conditional estimate is flagged.
pub const ESS_FLOOR: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSample {
    pub n: usize,
    pub values: Vec<f64>,
    pub log_weight: f64,
}

fn check_depth(n: usize) -> Result<()> {
    if n > MAX_TREE_DEPTH {
        return invalid(format!("tree depth {n} exceeds the cap {MAX_TREE_DEPTH}"));
    }
    Ok(())
}

fn fill_tree<R: Rng>(values: &mut [f64], rng: &mut R) {
    values[0] = 0.0;
    for i in 1..values.len() {
        let z: f64 = rng.sample(StandardNormal);
        values[i] = values[heap::parent(i)] + z;
    }
}

/// Untilted tree of depth `n`.
pub fn sample_tree(n: usize, seed: u64) -> Result<TreeSample> {
    check_depth(n)?;
    let mut values = vec![0.0; heap::node_count(n)];
    fill_tree(&mut values, &mut trial_rng(seed, 0));
    Ok(TreeSample { n, values, log_weight: 0.0 })
}

/// Shift by the harmonic profile that is 0 at the root and `v` from depth `k` on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TiltPlan {
    pub k: usize,
    pub v: f64,
    /// Shift at depths `0..=k`; deeper nodes are shifted by `v`.
    pub profile: Vec<f64>,
    /// `½⟨μ, Δμ⟩`.
    pub energy: f64,
    /// `Δμ` on depth `k`, the only depth where it is nonzero.
    pub laplacian: f64,
}

impl TiltPlan {
    pub fn new(k: usize, v: f64) -> Result<Self> {
        let profile = harmonic_profile(v, k)?;
        let energy = dirichlet_energy(v, k)?;
        let laplacian = profile[k] - profile[k - 1];
        Ok(Self { k, v, profile, energy, laplacian })
    }

    /// The default plan for `p_n(u)`: depth `max(l_u, 1)`, height `u′ + offset`.
    pub fn for_height(u: f64, offset: f64) -> Result<Self> {
        Self::new(level_of(u).max(1), reduced_height(u) + offset)
    }

    pub fn shift_at(&self, depth: usize) -> f64 {
        if depth <= self.k {
            self.profile[depth]
        } else {
            self.v
        }
    }

    /// `-½⟨μ, Δμ⟩ - ⟨h, Δμ⟩` given the sum of the untilted values on depth `k`.
    pub fn log_weight(&self, level_sum: f64) -> f64 {
        -self.energy - self.laplacian * level_sum
    }
}

/// Tilted tree: values `h + μ` with the weight that undoes the shift.
pub fn sample_tilted(n: usize, plan: &TiltPlan, seed: u64) -> Result<TreeSample> {
    check_depth(n)?;
    if plan.k > n {
        return invalid(format!("tilt depth {} exceeds tree depth {n}", plan.k));
    }
    let mut values = vec![0.0; heap::node_count(n)];
    let log_weight = tilted_into(&mut values, n, plan, &mut trial_rng(seed, 0));
    Ok(TreeSample { n, values, log_weight })
}

fn tilted_into<R: Rng>(values: &mut [f64], n: usize, plan: &TiltPlan, rng: &mut R) -> f64 {
    fill_tree(values, rng);
    let level_sum: f64 = values[heap::first_at(plan.k)..heap::first_at(plan.k + 1)].iter().sum();
    for d in 1..=n {
        let s = plan.shift_at(d);
        for x in &mut values[heap::first_at(d)..heap::first_at(d + 1)] {
            *x += s;
        }
    }
    plan.log_weight(level_sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Tilted,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "naive" => Ok(Self::Naive),
            "tilted" => Ok(Self::Tilted),
            other => Err(format!("unknown method {other:?} (naive or tilted)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PEstimate {
    pub n: usize,
    pub u: f64,
    pub method: Method,
    pub trials: usize,
    pub seed: u64,
    pub estimate: f64,
    pub log_estimate: f64,
    pub std_error: f64,
    pub ess: f64,
    pub accepted: usize,
    /// 95% upper bound `3/trials`, set only when nothing was accepted.
    pub upper_bound: Option<f64>,
}

/// Whether every leaf of an untilted tree, shifted by `leaf_shift`, clears
/// `floor`, and the sum of the values on depth `k`. Depth-first, stopping at
/// the first leaf below the floor.
fn leaves_clear<R: Rng>(n: usize, floor: f64, leaf_shift: f64, k: usize, stack: &mut Vec<(usize, f64)>, rng: &mut R) -> (bool, f64) {
    stack.clear();
    stack.push((0, 0.0));
    let mut level_sum = 0.0;
    let bar = floor - leaf_shift;
    while let Some((d, x)) = stack.pop() {
        if d == k {
            level_sum += x;
        }
        if d == n {
            if x < bar {
                return (false, level_sum);
            }
            continue;
        }
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        stack.push((d + 1, x + b));
        stack.push((d + 1, x + a));
    }
    (true, level_sum)
}

/// Unbiased estimate of `p_n(u) = P(min over leaves >= -m(n) + u)`.
pub fn estimate_p(n: usize, u: f64, method: Method, trials: usize, seed: u64, tilt_offset: f64) -> Result<PEstimate> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    let floor = -m_value(n) + u;
    let plan = match method {
        Method::Naive => None,
        Method::Tilted => {
            let p = TiltPlan::for_height(u, tilt_offset)?;
            if p.k > n {
                return invalid(format!("tilt depth {} exceeds tree depth {n}", p.k));
            }
            Some(p)
        }
    };
    let (shift, k) = plan.as_ref().map_or((0.0, 0), |p| (p.v, p.k));
    let draws: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map_init(Vec::new, |stack, i| {
            let mut rng = trial_rng(seed, i as u64);
            let (ok, level_sum) = leaves_clear(n, floor, shift, k, stack, &mut rng);
            ok.then(|| plan.as_ref().map_or(0.0, |p| p.log_weight(level_sum)))
        })
        .collect();
    let accepted = draws.iter().flatten().count();
    let mut out = PEstimate {
        n,
        u,
        method,
        trials,
        seed,
        estimate: 0.0,
        log_estimate: f64::NEG_INFINITY,
        std_error: 0.0,
        ess: 0.0,
        accepted,
        upper_bound: None,
    };
    if accepted == 0 {
        out.upper_bound = Some(3.0 / trials as f64);
        return Ok(out);
    }
    let top = draws.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for lw in draws.iter().flatten() {
        let w = (lw - top).exp();
        s1 += w;
        s2 += w * w;
    }
    let nt = trials as f64;
    let mean_scaled = s1 / nt;
    let var_scaled = (s2 / nt - mean_scaled * mean_scaled).max(0.0) * nt / (nt - 1.0).max(1.0);
    out.log_estimate = top + mean_scaled.ln();
    out.estimate = out.log_estimate.exp();
    out.std_error = top.exp() * (var_scaled / nt).sqrt();
    out.ess = s1 * s1 / s2;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ess: f64,
    pub accepted: usize,
    /// False when the effective sample size is below [`ESS_FLOOR`].
    pub reliable: bool,
}

/// Self-normalised estimate of `E[statistic(tree) | Ω_n(u)]`.
pub fn estimate_conditional<S>(
    n: usize,
    u: f64,
    statistic: S,
    method: Method,
    trials: usize,
    seed: u64,
    tilt_offset: f64,
) -> Result<ConditionalEstimate>
where
    S: Fn(&[f64]) -> f64 + Sync,
{
    check_depth(n)?;
    if trials == 0 {
        return invalid("need at least one trial");
    }
    let floor = -m_value(n) + u;
    let plan = match method {
        Method::Naive => None,
        Method::Tilted => Some(TiltPlan::for_height(u, tilt_offset)?),
    };
    if let Some(p) = &plan {
        if p.k > n {
            return invalid(format!("tilt depth {} exceeds tree depth {n}", p.k));
        }
    }
    let leaves = heap::first_at(n);
    let draws: Vec<Option<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; heap::node_count(n)],
            |values, i| {
                let mut rng = trial_rng(seed, i as u64);
                let lw = match &plan {
                    None => {
                        fill_tree(values, &mut rng);
                        0.0
                    }
                    Some(p) => tilted_into(values, n, p, &mut rng),
                };
                values[leaves..].iter().all(|&x| x >= floor).then(|| (lw, statistic(values)))
            },
        )
        .collect();
    let acc: Vec<(f64, f64)> = draws.into_iter().flatten().collect();
    if acc.is_empty() {
        return Ok(ConditionalEstimate { estimate: f64::NAN, std_error: f64::NAN, ess: 0.0, accepted: 0, reliable: false });
    }
    let top = acc.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = acc.iter().map(|a| (a.0 - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let est = w.iter().zip(&acc).map(|(w, a)| w * a.1).sum::<f64>() / sw;
    let var = w.iter().zip(&acc).map(|(w, a)| (w * (a.1 - est)).powi(2)).sum::<f64>() / (sw * sw);
    let ess = sw * sw / sw2;
    Ok(ConditionalEstimate { estimate: est, std_error: var.sqrt(), ess, accepted: acc.len(), reliable: ess >= ESS_FLOOR })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_weight_only_sees_depth_k() {
        let p = TiltPlan::new(3, 2.0).unwrap();
        assert!((p.laplacian - 2.0 / 7.0).abs() < 1e-12);
        assert!((p.energy - 0.5 * 4.0 * 8.0 / 7.0).abs() < 1e-12);
        let zero = TiltPlan::new(3, 0.0).unwrap();
        let t = sample_tilted(5, &zero, 9).unwrap();
        assert_eq!(t.log_weight, 0.0);
        assert_eq!(t.values, sample_tree(5, 9).unwrap().values);
    }

    #[test]
    fn depth_cap() {
        assert!(sample_tree(MAX_TREE_DEPTH + 1, 0).is_err());
    }
}
