//! Free energy of a potential summed over the leaves of a growing tree:
//! `G_k(u) = 2^{-k} ln E exp Σ_{leaves x} g(u + h(x))`.
//!
//! Splitting at the root gives `s_k = 2 ln E exp s_{k-1}(u + Z)` for the
//! scaled curve `s_k = 2^k G_k`, which is a plain log-convolution and never
//! exponentiates anything large.

use serde::{Deserialize, Serialize};

use crate::convolve::{log_convolve_gaussian, EdgeReport, Extension};
use crate::error::{invalid, HardwallError, Result};
use crate::grid::LogGridFunction;

/// How far below its maximum a potential must sit at both grid edges.
pub const EDGE_DROP: f64 = 20.0;

/// Finite stand-ins for the asymptotic conditions on a potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialWitness {
    pub sup: f64,
    pub left_drop: f64,
    pub right_drop: f64,
    /// Largest jump between neighbouring grid values.
    pub modulus: f64,
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub g: LogGridFunction,
    /// Optional approximating sequence `g_n`; empty when only the limit is known.
    pub sequence: Vec<LogGridFunction>,
    pub witness: PotentialWitness,
}

fn witness(g: &LogGridFunction) -> Result<PotentialWitness> {
    let v = g.values();
    let sup = g.max_value();
    if !sup.is_finite() {
        return invalid("potential has no finite value");
    }
    let modulus = v
        .windows(2)
        .filter(|w| w[0].is_finite() && w[1].is_finite())
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    Ok(PotentialWitness { sup, left_drop: sup - v[0], right_drop: sup - v[v.len() - 1], modulus })
}

impl PotentialSpec {
    /// Validates that `g` falls at least [`EDGE_DROP`] below its maximum at both edges.
    pub fn new(g: LogGridFunction) -> Result<Self> {
        Self::with_sequence(g, Vec::new())
    }

    pub fn with_sequence(g: LogGridFunction, sequence: Vec<LogGridFunction>) -> Result<Self> {
        let w = witness(&g)?;
        for (i, gn) in std::iter::once(&g).chain(&sequence).enumerate() {
            gn.check_same_grid(&g)?;
            let wi = witness(gn)?;
            if !(wi.left_drop >= EDGE_DROP && wi.right_drop >= EDGE_DROP) {
                let what = if i == 0 { "potential".to_string() } else { format!("sequence term {}", i - 1) };
                return Err(HardwallError::Precondition(format!(
                    "{what} does not decay at the grid edges: drops {:.3} (left) and {:.3} (right), need {EDGE_DROP}",
                    wi.left_drop, wi.right_drop
                )));
            }
        }
        Ok(Self { g, sequence, witness: w })
    }
}

#[derive(Debug, Clone)]
pub struct FreeEnergyCurve {
    pub k: usize,
    /// `s_k = 2^k · G_k`.
    pub scaled: LogGridFunction,
    pub g_star: f64,
    pub u_star: f64,
    pub edges: EdgeReport,
}

impl FreeEnergyCurve {
    /// Generation 0: a single leaf at the root, so `G_0 = g`.
    pub fn base(g: &LogGridFunction) -> Self {
        Self::from_scaled(0, g.clone(), EdgeReport::default())
    }

    fn from_scaled(k: usize, scaled: LogGridFunction, edges: EdgeReport) -> Self {
        // Leftmost maximiser.
        let i = scaled.argmax();
        let scale = 0.5f64.powi(k as i32);
        Self { k, g_star: scaled.values()[i] * scale, u_star: scaled.grid().point(i), scaled, edges }
    }

    /// `G_k` on the grid.
    pub fn values(&self) -> LogGridFunction {
        self.scaled.scale(0.5f64.powi(self.k as i32))
    }
}

pub fn fe_step(prev: &FreeEnergyCurve) -> Result<FreeEnergyCurve> {
    let (c, e) = log_convolve_gaussian(&prev.scaled, 1.0, Extension::Linear, Extension::Linear)?;
    let scaled = c.scale(2.0);
    if scaled.values().iter().any(|x| x.is_infinite() && *x > 0.0) || !scaled.max_value().is_finite() {
        return Err(HardwallError::Numerical(format!("free energy overflowed at generation {}", prev.k + 1)));
    }
    Ok(FreeEnergyCurve::from_scaled(prev.k + 1, scaled, prev.edges.merge(e)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeEnergyRow {
    pub k: usize,
    pub u_star: f64,
    pub g_star: f64,
    /// `|G_k* - G_{k-1}*|`; NaN at k = 0.
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeEnergyLimit {
    pub g_star: f64,
    pub k_reached: usize,
    pub gap: f64,
    pub history: Vec<FreeEnergyRow>,
}

/// Iterate until consecutive maxima differ by less than `tol`.
pub fn g_star_limit(pot: &PotentialSpec, tol: f64, k_max: usize) -> Result<FreeEnergyLimit> {
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let mut cur = FreeEnergyCurve::base(&pot.g);
    let mut history = vec![FreeEnergyRow { k: 0, u_star: cur.u_star, g_star: cur.g_star, gap: f64::NAN }];
    for _ in 0..k_max {
        let next = fe_step(&cur)?;
        let gap = (next.g_star - cur.g_star).abs();
        history.push(FreeEnergyRow { k: next.k, u_star: next.u_star, g_star: next.g_star, gap });
        cur = next;
        if gap < tol {
            return Ok(FreeEnergyLimit { g_star: cur.g_star, k_reached: cur.k, gap, history });
        }
    }
    let last = history.last().map(|r| r.gap).unwrap_or(f64::NAN);
    Err(HardwallError::NoConvergence { iterations: k_max, last_change: last })
}

/// All generations up to `k_max`, without a stopping rule.
pub fn free_energy_history(pot: &PotentialSpec, k_max: usize) -> Result<Vec<FreeEnergyRow>> {
    let mut cur = FreeEnergyCurve::base(&pot.g);
    let mut rows = vec![FreeEnergyRow { k: 0, u_star: cur.u_star, g_star: cur.g_star, gap: f64::NAN }];
    for _ in 0..k_max {
        let next = fe_step(&cur)?;
        rows.push(FreeEnergyRow { k: next.k, u_star: next.u_star, g_star: next.g_star, gap: (next.g_star - cur.g_star).abs() });
        cur = next;
    }
    Ok(rows)
}

/// `g(s) = ln p_∞(-s) - 2^δ s` from the limit tail curve `ln p_∞(u)` on a u-grid.
pub fn brw_theta_potential(delta: f64, tail_limit: &LogGridFunction) -> Result<PotentialSpec> {
    if !(0.0..1.0).contains(&delta) {
        return invalid(format!("delta must lie in [0, 1), got {delta}"));
    }
    let grid = tail_limit.grid().reflected();
    let src = tail_limit.values();
    let n = src.len();
    let slope = 2f64.powf(delta);
    let values: Vec<f64> = (0..n).map(|i| src[n - 1 - i] - slope * grid.point(i)).collect();
    let g = LogGridFunction::new(grid, values)?;
    PotentialSpec::new(g).map_err(|e| match e {
        HardwallError::Precondition(m) => {
            HardwallError::Precondition(format!("tail grid too narrow for the potential: {m}"))
        }
        other => other,
    })
}
