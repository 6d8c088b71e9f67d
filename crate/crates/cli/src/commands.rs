//! Subcommands: argument structs and the tables they produce.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hardwall_core::chain::{drift_envelope, SolvedChain};
use hardwall_core::free_energy::{brw_theta_potential, g_star_limit, PotentialSpec};
use hardwall_core::mc::{estimate_p, Method, MAX_TREE_DEPTH};
use hardwall_core::model::{level_of, m_value, reduced_height, C0};
use hardwall_core::spine::{
    build_spine, conditional_mean_profile, pair_covariance_tree, recenter, recenter_unchecked, DEFAULT_LEVEL_GAP,
};
use hardwall_core::tails::{lower_margin, p_infinity, theta_profile, TailLattice, TailTable};
use hardwall_core::{GridSpec, LogGridFunction};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{Format, Table};
use crate::range::Range;
use crate::CliError;

/// Deepest tail table the front end will build.
pub const MAX_DEPTH: usize = 4096;

#[derive(Parser, Debug, Clone, Serialize)]
#[command(name = "hardwall", version, about = "Hard-wall conditioned branching random walk on the binary tree")]
pub struct Cli {
    #[command(subcommand)]
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// ln p_n(u), its derivative and both residuals over a u range.
    Tails(TailsArgs),
    /// Residual profile [-ln p_n(u) - u'^2/2]/u against the fractional part of log2 u.
    Theta(ThetaArgs),
    /// Conditional mean and variance along a branch.
    Profile(ProfileArgs),
    /// Covariance of two leaves against the depth where their paths split.
    Covariance(CovarianceArgs),
    /// Drift envelope of the recentered branch kernels.
    Kernel(KernelArgs),
    /// Total variation between two copies of the recentered branch.
    Tv(TvArgs),
    /// Free energy maxima G_k* and their convergence.
    FreeEnergy(FreeEnergyArgs),
    /// Monte Carlo estimate of p_n(u).
    Sample(SampleArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Lower end of the height grid.
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: Option<f64>,
    /// Upper end of the height grid.
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: Option<f64>,
    /// Grid spacing.
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// csv (default) or json; verify defaults to json.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TailsArgs {
    #[arg(long)]
    pub n: usize,
    /// Heights, start:stop:step or a single value.
    #[arg(long, allow_hyphen_values = true)]
    pub u: Range,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ThetaArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "16:128:4")]
    pub u: Range,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub n: usize,
    /// Threshold; defaults to the hard wall m(n).
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<f64>,
    /// Branch length; defaults to min(n, floor(log2 n) + 10).
    #[arg(long)]
    pub l: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CovarianceArgs {
    #[arg(long)]
    pub n: usize,
    /// Meeting depths; defaults to 0:n:1.
    #[arg(long)]
    pub meet: Option<Range>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct KernelArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<f64>,
    /// Branch length; defaults to floor(log2 u) - 3.
    #[arg(long)]
    pub l: Option<usize>,
    /// Site whose kernels are probed; defaults to l - 1.
    #[arg(long)]
    pub site: Option<usize>,
    /// Conditioning values.
    #[arg(long, default_value = "-6:6:1", allow_hyphen_values = true)]
    pub v: Range,
    /// Half-width of the neutral zone.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Allow branch lengths past floor(log2 u) - 3.
    #[arg(long)]
    pub unchecked: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TvArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub v: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub vprime: f64,
    /// Branch length; defaults to min(n, 40).
    #[arg(long)]
    pub l: Option<usize>,
    /// Site the two copies start from.
    #[arg(long, default_value_t = 0)]
    pub k0: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    /// g(u) = -u^2
    Quad,
    /// g(s) = ln p_inf(-s) - 2^delta s
    Theta,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FreeEnergyArgs {
    #[arg(long, value_enum)]
    pub potential: PotentialKind,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 14)]
    pub k_max: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Depth of the tail iteration behind the theta potential.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub u: Range,
    #[arg(long, default_value = "tilted")]
    #[serde(serialize_with = "method_name")]
    pub method: Method,
    /// Added to the reduced height to set the tilt target.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

fn method_name<S: serde::Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
    m.serialize(s)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VerifyArgs {
    /// Comma-separated criteria: numbers, names or module tags.
    #[arg(long)]
    pub only: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Tails(a) => &a.common,
            Command::Theta(a) => &a.common,
            Command::Profile(a) => &a.common,
            Command::Covariance(a) => &a.common,
            Command::Kernel(a) => &a.common,
            Command::Tv(a) => &a.common,
            Command::FreeEnergy(a) => &a.common,
            Command::Sample(a) => &a.common,
            Command::Verify(a) => &a.common,
        }
    }

    pub fn format(&self) -> Format {
        let default = if matches!(self, Command::Verify(_)) { Format::Json } else { Format::Csv };
        self.common().format.unwrap_or(default)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Validation(msg.into()))
}

fn check_depth(n: usize, max: usize) -> Result<(), CliError> {
    if n == 0 || n > max {
        return bad(format!("--n must be in 1..={max}, got {n}"));
    }
    Ok(())
}

fn check_step(step: f64) -> Result<(), CliError> {
    if !(step > 0.0 && step <= 1.0) {
        return bad(format!("--grid-step must be in (0, 1], got {step}"));
    }
    Ok(())
}

/// Tail table reaching depth `n` that covers heights `[u_lo, u_hi]`, widened by `--grid-lo/hi`.
fn tail_table(n: usize, u_lo: f64, u_hi: f64, c: &Common, default_step: f64) -> Result<TailTable, CliError> {
    let step = c.grid_step.unwrap_or(default_step);
    check_step(step)?;
    let lo = c.grid_lo.unwrap_or(u_lo);
    let hi = c.grid_hi.unwrap_or(u_hi);
    if lo > u_lo {
        return bad(format!("--grid-lo {lo} lies above the smallest requested height {u_lo}"));
    }
    if hi < u_hi {
        return bad(format!("--grid-hi {hi} lies below the largest requested height {u_hi}"));
    }
    let lattice = TailLattice::new(step, lower_margin(n).max(-lo + 1.0), hi.max(0.0) + 45.0)?;
    Ok(TailTable::build(n, lattice)?)
}

fn ensure_finite(name: &str, x: f64) -> Result<(), CliError> {
    if !x.is_finite() {
        return bad(format!("--{name} must be finite"));
    }
    Ok(())
}

pub fn tails(a: &TailsArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_DEPTH)?;
    let table = tail_table(a.n, a.u.min(), a.u.max(), &a.common, 0.01)?;
    let rows = a
        .u
        .values()
        .par_iter()
        .map(|&u| -> Result<_, CliError> {
            let log_p = table.log_p(a.n, u)?;
            let dlog_p = table.dlog_p(a.n, u)?;
            let (theta, drift) = if u > 0.0 {
                let r = reduced_height(u);
                ((-log_p - 0.5 * r * r) / u, -dlog_p - (u - C0 * u.log2()))
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok((u, log_p, dlog_p, theta, drift))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut t = Table::new("tails", &["n", "u", "log_p", "dlog_p", "theta_residual", "dlog_residual"]);
    for (u, lp, d, th, dr) in rows {
        t.push(vec![a.n.into(), u.into(), lp.into(), d.into(), th.into(), dr.into()]);
    }
    Ok(t)
}

pub fn theta(a: &ThetaArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_DEPTH)?;
    if a.u.min() <= 0.0 {
        return bad("theta needs every --u > 0");
    }
    let table = tail_table(a.n, a.u.min(), a.u.max(), &a.common, 0.02)?;
    let prof = theta_profile(&table, a.n, a.u.values())?;
    let mut t = Table::new(
        "theta",
        &["n", "u", "frac_log2_u", "level", "reduced", "log_p", "dlog_p", "residual", "out_of_range"],
    );
    for r in &prof.rows {
        t.push(vec![
            a.n.into(),
            r.u.into(),
            r.frac.into(),
            r.level.into(),
            r.reduced.into(),
            r.log_p.into(),
            r.dlog_p.into(),
            r.residual.into(),
            r.out_of_range.into(),
        ]);
    }
    Ok(t)
}

pub fn profile(a: &ProfileArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_DEPTH)?;
    let u = a.u.unwrap_or_else(|| m_value(a.n));
    ensure_finite("u", u)?;
    let l = a.l.unwrap_or_else(|| a.n.min(hardwall_core::model::floor_log2(a.n) + 10));
    if l == 0 || l > a.n {
        return bad(format!("--l must be in 1..={}, got {l}", a.n));
    }
    let table = tail_table(a.n, u.min(0.0), u + 5.0, &a.common, 0.02)?;
    let rows = conditional_mean_profile(&table, a.n, u, l)?;
    let mut t = Table::new("profile", &["n", "u", "k", "mean", "var", "center"]);
    for r in rows {
        t.push(vec![a.n.into(), u.into(), r.k.into(), r.mean.into(), r.variance.into(), r.center.into()]);
    }
    Ok(t)
}

pub fn covariance(a: &CovarianceArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_DEPTH)?;
    let depths = match &a.meet {
        Some(r) => r.as_depths().map_err(CliError::Validation)?,
        None => (0..=a.n).collect(),
    };
    if let Some(&d) = depths.iter().find(|&&d| d > a.n) {
        return bad(format!("--meet contains {d}, beyond n = {}", a.n));
    }
    let u = m_value(a.n);
    let table = tail_table(a.n, 0.0, u + 1.0, &a.common, 0.02)?;
    let cov = pair_covariance_tree(&table, a.n, &depths)?;
    let mut t = Table::new("covariance", &["n", "depth_meet", "covariance"]);
    for c in cov {
        t.push(vec![a.n.into(), c.depth_meet.into(), c.covariance.into()]);
    }
    Ok(t)
}

/// Recentered branch for the kernel and TV commands.
fn recentered(
    n: usize,
    u: f64,
    l: usize,
    unchecked: bool,
    c: &Common,
) -> Result<SolvedChain, CliError> {
    let table = tail_table(n, u.min(0.0), u + 5.0, c, 0.02)?;
    let s = build_spine(&table, n, l, u)?;
    let r = if unchecked { recenter_unchecked(&table, &s)? } else { recenter(&table, &s, DEFAULT_LEVEL_GAP)? };
    Ok(SolvedChain::solve(r.spec)?)
}

pub fn kernel(a: &KernelArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_DEPTH)?;
    let u = a.u.unwrap_or_else(|| m_value(a.n));
    ensure_finite("u", u)?;
    let level = level_of(u);
    let l = match a.l {
        Some(l) => l,
        None if level > DEFAULT_LEVEL_GAP => level - DEFAULT_LEVEL_GAP,
        None => return bad(format!("u = {u} is too low for a default branch length; pass --l with --unchecked")),
    };
    if l == 0 || l > a.n {
        return bad(format!("--l must be in 1..={}, got {l}", a.n));
    }
    let site = a.site.unwrap_or(l - 1);
    if site >= l {
        return bad(format!("--site must be below the branch length {l}, got {site}"));
    }
    if !(a.b >= 0.0) {
        return bad("--b must be nonnegative");
    }
    let sc = recentered(a.n, u, l, a.unchecked, &a.common)?;
    let kernels = a.v.values().iter().map(|&v| sc.step_kernel(site, v)).collect::<Result<Vec<_>, _>>()?;
    let env = drift_envelope(&kernels, a.b)?;
    let mut t = Table::new(
        "kernel",
        &["n", "u", "l", "site", "v", "lower", "upper", "points", "a", "d", "big_d", "strength", "inward"],
    );
    for p in &env.probes {
        t.push(vec![
            a.n.into(),
            u.into(),
            l.into(),
            site.into(),
            p.v.into(),
            p.lower.into(),
            p.upper.into(),
            p.points.into(),
            env.a.into(),
            env.d.into(),
            env.big_d.into(),
            env.strength.into(),
            (env.inward_below && env.inward_above).into(),
        ]);
    }
    Ok(t)
}

pub fn tv(a: &TvArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_DEPTH)?;
    let u = a.u.unwrap_or_else(|| m_value(a.n));
    ensure_finite("u", u)?;
    ensure_finite("v", a.v)?;
    ensure_finite("vprime", a.vprime)?;
    let l = a.l.unwrap_or(a.n.min(40));
    if l == 0 || l > a.n || a.k0 >= l {
        return bad(format!("need 0 <= --k0 < --l <= n; got k0 = {}, l = {l}, n = {}", a.k0, a.n));
    }
    let sc = recentered(a.n, u, l, true, &a.common)?;
    let curve = sc.tv_curve(a.k0, a.v, a.vprime, l - a.k0)?;
    let mut t = Table::new("tv", &["n", "u", "l", "k0", "v", "vprime", "j", "tv"]);
    for (j, x) in curve.iter().enumerate() {
        t.push(vec![
            a.n.into(),
            u.into(),
            l.into(),
            a.k0.into(),
            a.v.into(),
            a.vprime.into(),
            (j + 1).into(),
            (*x).into(),
        ]);
    }
    Ok(t)
}

/// The potential behind `free-energy`, on the grid the flags describe.
pub fn potential(a: &FreeEnergyArgs) -> Result<PotentialSpec, CliError> {
    let c = &a.common;
    match a.potential {
        PotentialKind::Quad => {
            let step = c.grid_step.unwrap_or(0.01);
            check_step(step)?;
            let (lo, hi) = (c.grid_lo.unwrap_or(-12.0), c.grid_hi.unwrap_or(12.0));
            if !(hi > lo + 2.0 * step) {
                return bad("--grid-hi must exceed --grid-lo");
            }
            let g = LogGridFunction::from_fn(GridSpec::covering(lo, hi, step)?, |u| -u * u)?;
            Ok(PotentialSpec::new(g)?)
        }
        PotentialKind::Theta => {
            if !(0.0..1.0).contains(&a.delta) {
                return bad(format!("--delta must lie in [0, 1), got {}", a.delta));
            }
            check_depth(a.n, MAX_DEPTH)?;
            if a.n < 2 {
                return bad("--n must be at least 2 for the theta potential");
            }
            let step = c.grid_step.unwrap_or(0.02);
            check_step(step)?;
            let (lo, hi) = (c.grid_lo.unwrap_or(-30.0), c.grid_hi.unwrap_or(12.0));
            if !(hi > lo + 2.0 * step) {
                return bad("--grid-hi must exceed --grid-lo");
            }
            let pinf = p_infinity(a.n, lo, hi, step, 1e-3)?;
            Ok(brw_theta_potential(a.delta, &pinf.curve)?)
        }
    }
}

pub fn free_energy(a: &FreeEnergyArgs) -> Result<Table, CliError> {
    if !(a.tol > 0.0) {
        return bad("--tol must be positive");
    }
    if a.k_max == 0 || a.k_max > 64 {
        return bad(format!("--k-max must be in 1..=64, got {}", a.k_max));
    }
    let pot = potential(a)?;
    let lim = g_star_limit(&pot, a.tol, a.k_max)?;
    let mut t = Table::new("free-energy", &["k", "u_star", "g_star", "gap"]);
    for r in &lim.history {
        t.push(vec![r.k.into(), r.u_star.into(), r.g_star.into(), r.gap.into()]);
    }
    Ok(t)
}

pub fn sample(a: &SampleArgs) -> Result<Table, CliError> {
    check_depth(a.n, MAX_TREE_DEPTH)?;
    ensure_finite("offset", a.offset)?;
    let trials = a.common.trials.unwrap_or(100_000);
    if trials < 2 {
        return bad("--trials must be at least 2");
    }
    if a.method == Method::Tilted {
        if let Some(&u) = a.u.values().iter().find(|&&u| level_of(u).max(1) > a.n) {
            return bad(format!("u = {u} needs a tilt at depth {} > n = {}", level_of(u), a.n));
        }
    }
    let mut t = Table::new(
        "sample",
        &["n", "u", "method", "trials", "log_estimate", "se", "ess", "seed", "accepted", "upper_bound"],
    );
    let method = match a.method {
        Method::Naive => "naive",
        Method::Tilted => "tilted",
    };
    for &u in a.u.values() {
        let e = estimate_p(a.n, u, a.method, trials, a.common.seed, a.offset)?;
        t.push(vec![
            a.n.into(),
            u.into(),
            method.into(),
            trials.into(),
            e.log_estimate.into(),
            e.std_error.into(),
            e.ess.into(),
            a.common.seed.into(),
            e.accepted.into(),
            e.upper_bound.into(),
        ]);
    }
    Ok(t)
}
