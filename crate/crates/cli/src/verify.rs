//! The acceptance suite: thirteen numbered checks of the library against
//! closed forms, brute-force quadrature, Monte Carlo and the asymptotic
//! statements it is built to probe.
//!
//! Every check reports what it measured. A check passes only if its
//! property holds and it finished inside its time budget.

use std::time::Instant;

use clap::Parser;
use hardwall_core::chain::{check_growth, forward_backward, pinned_tail, step_kernel, ChainSpec, SolvedChain};
use hardwall_core::fit::fit_line;
use hardwall_core::free_energy::{brw_theta_potential, fe_step, g_star_limit, FreeEnergyCurve, PotentialSpec};
use hardwall_core::mc::{estimate_p, Method};
use hardwall_core::model::{floor_log2, m_value, reduced_height, C0};
use hardwall_core::spine::{
    build_spine, conditional_mean_profile, derivative_identity_check, hat_h_tails, pair_covariance_tree,
    recenter_unchecked,
};
use hardwall_core::tails::{p_infinity, TailTable};
use hardwall_core::{GridSpec, HardwallError, LogGridFunction};
use serde_json::{json, Map, Value};

use crate::output::{self, Cell, Format, Table};
use crate::{Cli, CliError};

/// Outcome of one check before timing is folded in.
pub struct Check {
    pub passed: bool,
    pub measured: Map<String, Value>,
    pub note: String,
}

impl Check {
    fn new() -> Self {
        Self { passed: true, measured: Map::new(), note: String::new() }
    }

    fn put(&mut self, key: &str, v: impl Into<Value>) {
        self.measured.insert(key.to_string(), v.into());
    }

    /// Record a float; non-finite values are stored as strings so the report stays valid JSON.
    fn num(&mut self, key: &str, x: f64) {
        let v = if x.is_finite() { json!(x) } else { json!(x.to_string()) };
        self.measured.insert(key.to_string(), v);
    }

    fn require(&mut self, ok: bool, why: impl Into<String>) {
        if !ok {
            self.passed = false;
            if !self.note.is_empty() {
                self.note.push_str("; ");
            }
            self.note.push_str(&why.into());
        }
    }
}

type CheckFn = fn(u64) -> Result<Check, HardwallError>;

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub tags: &'static [&'static str],
    pub limit_secs: f64,
    check: CheckFn,
}

pub const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "closed-form", tags: &["tails"], limit_secs: 1.0, check: closed_form },
    Criterion { id: 2, name: "brute-force", tags: &["tails", "chain"], limit_secs: 10.0, check: brute_force },
    Criterion { id: 3, name: "monte-carlo", tags: &["mc"], limit_secs: 120.0, check: monte_carlo },
    Criterion { id: 4, name: "derivative-form", tags: &["tails"], limit_secs: 60.0, check: derivative_form },
    Criterion { id: 5, name: "theta-band", tags: &["tails"], limit_secs: 300.0, check: theta_band },
    Criterion { id: 6, name: "derivative-identity", tags: &["spine"], limit_secs: 60.0, check: derivative_identity },
    Criterion { id: 7, name: "repulsion-profile", tags: &["spine"], limit_secs: 60.0, check: repulsion_profile },
    Criterion { id: 8, name: "deviation-tails", tags: &["spine"], limit_secs: 120.0, check: deviation_tails },
    Criterion { id: 9, name: "covariances", tags: &["spine"], limit_secs: 180.0, check: covariances },
    Criterion { id: 10, name: "localized-tails", tags: &["chain", "spine"], limit_secs: 60.0, check: localized_tails },
    Criterion { id: 11, name: "tv-decay", tags: &["chain", "spine"], limit_secs: 120.0, check: tv_decay },
    Criterion { id: 12, name: "free-energy", tags: &["free-energy"], limit_secs: 300.0, check: free_energy },
    Criterion { id: 13, name: "determinism", tags: &["cli"], limit_secs: 60.0, check: determinism },
];

/// Criteria picked by a comma-separated list of numbers, names or tags.
pub fn select(only: Option<&str>) -> Result<Vec<&'static Criterion>, CliError> {
    let Some(spec) = only else { return Ok(CRITERIA.iter().collect()) };
    let mut picked = vec![false; CRITERIA.len()];
    for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let hits: Vec<usize> = CRITERIA
            .iter()
            .enumerate()
            .filter(|(_, c)| tok.parse::<u8>() == Ok(c.id) || c.name == tok || c.tags.contains(&tok))
            .map(|(i, _)| i)
            .collect();
        if hits.is_empty() {
            let tags: std::collections::BTreeSet<&str> = CRITERIA.iter().flat_map(|c| c.tags.iter().copied()).collect();
            return Err(CliError::Validation(format!(
                "--only: {tok:?} matches no criterion (use 1-13, a name such as monte-carlo, or a tag: {})",
                tags.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        for i in hits {
            picked[i] = true;
        }
    }
    if !picked.contains(&true) {
        return Err(CliError::Validation("--only selects nothing".into()));
    }
    Ok(CRITERIA.iter().zip(picked).filter(|(_, p)| *p).map(|(c, _)| c).collect())
}

pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub within_time: bool,
    pub limit_secs: f64,
    pub seconds: f64,
    pub measured: Map<String, Value>,
    pub note: String,
}

impl CriterionResult {
    pub fn summary_line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {:>2} {:<20} {verdict}  {:>7.1}s / {:.0}s", self.id, self.name, self.seconds, self.limit_secs);
        if !self.note.is_empty() {
            line.push_str("  ");
            line.push_str(&self.note);
        }
        line
    }
}

/// Run the selected criteria in order; a failing or erroring check does not stop the run.
pub fn run(selection: &[&Criterion], seed: u64, mut on_done: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let mut out = Vec::with_capacity(selection.len());
    for c in selection {
        let t0 = Instant::now();
        let check = (c.check)(seed).unwrap_or_else(|e| {
            let mut k = Check::new();
            k.require(false, format!("error: {e}"));
            k
        });
        let seconds = t0.elapsed().as_secs_f64();
        let within_time = seconds < c.limit_secs;
        let mut note = check.note;
        if !within_time {
            if !note.is_empty() {
                note.push_str("; ");
            }
            note.push_str(&format!("took {seconds:.1}s, budget {:.0}s", c.limit_secs));
        }
        let r = CriterionResult {
            id: c.id,
            name: c.name,
            passed: check.passed && within_time,
            within_time,
            limit_secs: c.limit_secs,
            seconds,
            measured: check.measured,
            note,
        };
        on_done(&r);
        out.push(r);
    }
    out
}

/// Machine-readable report. Timings are left out so reruns compare equal.
pub fn report(results: &[CriterionResult], config: &Value, format: Format) -> Result<Vec<u8>, CliError> {
    let passed = results.iter().filter(|r| r.passed).count();
    match format {
        Format::Json => {
            let (_, hash) = output::config_header(config);
            let criteria: Vec<Value> = results
                .iter()
                .map(|r| {
                    json!({
                        "id": r.id,
                        "name": r.name,
                        "passed": r.passed,
                        "within_time": r.within_time,
                        "limit_seconds": r.limit_secs,
                        "measured": r.measured,
                        "note": r.note,
                    })
                })
                .collect();
            let doc = json!({
                "schema": format!("{}/verify", output::SCHEMA_VERSION),
                "config": config,
                "config_sha256": hash,
                "passed": passed,
                "failed": results.len() - passed,
                "criteria": criteria,
            });
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("json");
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => {
            let mut t = Table::new("verify", &["id", "name", "passed", "within_time", "measured", "note"]);
            for r in results {
                t.push(vec![
                    Cell::Int(r.id as i64),
                    r.name.into(),
                    r.passed.into(),
                    r.within_time.into(),
                    Value::Object(r.measured.clone()).to_string().into(),
                    r.note.clone().into(),
                ]);
            }
            output::render(&t, config, Format::Csv)
        }
    }
}

// ---------------------------------------------------------------------------
// Independent oracles.

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn gauss(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Composite Simpson for `∫ φ(z) g(z) dz` on [-10, 10].
fn gauss_avg(g: impl Fn(f64) -> f64) -> f64 {
    let n = 1000;
    let h = 20.0 / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let z = -10.0 + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * phi(z) * g(z);
    }
    s * h / 3.0
}

/// P(min over the 2^n leaves >= v) by nesting the one-generation identity.
fn nested_min_law(n: usize, v: f64) -> f64 {
    match n {
        0 => (v <= 0.0) as u8 as f64,
        1 => big_phi(-v).powi(2),
        _ => gauss_avg(|z| nested_min_law(n - 1, v - z)).powi(2),
    }
}

fn lam_a(w: f64) -> f64 {
    -0.3 * (w - 0.7).powi(2)
}
fn lam_b(w: f64) -> f64 {
    -0.05 * w.powi(4) + (1.3 * w).sin()
}
fn lam_c(w: f64) -> f64 {
    -0.5 * (w + 0.4).powi(2) + 0.3 * w.cos()
}

fn chain_of(g: GridSpec, start: f64, pots: &[fn(f64) -> f64]) -> Result<ChainSpec, HardwallError> {
    let p = pots.iter().map(|f| LogGridFunction::from_fn(g, f)).collect::<Result<Vec<_>, _>>()?;
    ChainSpec::new(g, start, 1.0, p)
}

fn nodes(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).round() as usize;
    (0..=n).map(|i| lo + i as f64 * h).collect()
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::INFINITY, f64::min)
}

fn steps(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    nodes(lo, hi, h)
}

// ---------------------------------------------------------------------------
// The checks.

fn closed_form(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let t = TailTable::for_depth(1, 6.0, 0.01)?;
    let mut err: f64 = 0.0;
    for u in steps(-4.0, 4.0, 0.05) {
        let exact = 2.0 * big_phi(m_value(1) - u).ln();
        err = err.max((t.log_p(1, u)? - exact).abs());
    }
    c.num("max_log_error", err);
    c.require(err < 1e-6, format!("max |log error| {err:.2e} >= 1e-6"));
    Ok(c)
}

fn brute_force(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();

    let t = TailTable::for_depth(3, 5.0, 0.01)?;
    let mut tail_err: f64 = 0.0;
    for n in 1..=3 {
        let curve = t.curve(n)?;
        let g = curve.grid();
        for i in (0..g.count()).step_by(37) {
            let f = curve.f.values()[i];
            if f > -30.0 {
                tail_err = tail_err.max((f - nested_min_law(n, g.point(i)).ln()).abs());
            }
        }
    }
    c.num("tail_max_error", tail_err);
    c.require(tail_err < 1e-6, format!("tail curves off by {tail_err:.2e}"));

    // Two sites: means by a double sum on an independent grid.
    let g = GridSpec::covering(-14.0, 14.0, 0.02)?;
    let start = 0.5;
    let m = forward_backward(&chain_of(g, start, &[lam_a, lam_b])?)?;
    let xs = nodes(-12.0, 12.0, 0.01);
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &x1 in &xs {
        let a = gauss(x1 - start, 1.0) * lam_a(x1).exp();
        for &x2 in &xs {
            let w = a * gauss(x2 - x1, 1.0) * lam_b(x2).exp();
            z += w;
            s1 += w * x1;
            s2 += w * x2;
        }
    }
    let mean_err = (m.mean(1) - s1 / z).abs().max((m.mean(2) - s2 / z).abs());

    // Three sites: covariances by a triple sum.
    let g = GridSpec::covering(-12.0, 12.0, 0.02)?;
    let sc = SolvedChain::solve(chain_of(g, 0.0, &[lam_c, lam_b, lam_a])?)?;
    let h = 0.04;
    let xs = nodes(-8.0, 8.0, h);
    let n = xs.len();
    let e: Vec<[f64; 3]> = xs.iter().map(|&x| [lam_c(x).exp(), lam_b(x).exp(), lam_a(x).exp()]).collect();
    let kern: Vec<f64> = (0..2 * n).map(|d| gauss((d as f64 - n as f64) * h, 1.0)).collect();
    let k = |i: usize, j: usize| kern[n + j - i];
    let mut mom = [[0.0f64; 4]; 4];
    let mut z = 0.0;
    for i in 0..n {
        let wi = gauss(xs[i], 1.0) * e[i][0];
        for j in 0..n {
            let wij = wi * k(i, j) * e[j][1];
            if wij < 1e-300 {
                continue;
            }
            for l in 0..n {
                let w = wij * k(j, l) * e[l][2];
                let x = [1.0, xs[i], xs[j], xs[l]];
                z += w;
                for a in 1..4 {
                    mom[0][a] += w * x[a];
                    for b in a..4 {
                        mom[a][b] += w * x[a] * x[b];
                    }
                }
            }
        }
    }
    let mut cov_err: f64 = 0.0;
    for a in 1..4 {
        for b in a..4 {
            let oracle = mom[a][b] / z - mom[0][a] / z * mom[0][b] / z;
            cov_err = cov_err.max((sc.pair_covariance(a, b)? - oracle).abs());
        }
    }

    // First kernel by Bayes' rule with the downstream weight summed directly.
    let g = GridSpec::covering(-12.0, 12.0, 0.02)?;
    let spec = chain_of(g, 0.0, &[lam_b, lam_c])?;
    let v = 0.8;
    let kd = step_kernel(&spec, 0, v)?;
    let xs: Vec<f64> = g.points().collect();
    let down: Vec<f64> = xs
        .iter()
        .map(|&u| (0..xs.len()).map(|j| g.weight(j) * gauss(xs[j] - u, 1.0) * lam_c(xs[j]).exp()).sum())
        .collect();
    let raw: Vec<f64> = xs.iter().zip(&down).map(|(&u, d)| gauss(u - v, 1.0) * lam_b(u).exp() * d).collect();
    let zk: f64 = raw.iter().enumerate().map(|(i, r)| g.weight(i) * r).sum();
    let kernel_err = max_of(raw.iter().enumerate().map(|(i, r)| (kd.log_density.values()[i].exp() - r / zk).abs()));

    c.num("chain_mean_error", mean_err);
    c.num("chain_covariance_error", cov_err);
    c.num("chain_kernel_error", kernel_err);
    for (what, err) in [("means", mean_err), ("covariances", cov_err), ("kernel", kernel_err)] {
        c.require(err < 1e-6, format!("chain {what} off by {err:.2e}"));
    }
    Ok(c)
}

fn monte_carlo(seed: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let t = TailTable::for_depth(16, 10.0, 0.01)?;
    let p10 = t.log_p(10, 0.0)?.exp();
    let p16 = t.log_p(16, 6.0)?.exp();
    let naive = estimate_p(10, 0.0, Method::Naive, 1_000_000, seed, 1.0)?;
    let tilted_trials = 100_000;
    let tilted = estimate_p(16, 6.0, Method::Tilted, tilted_trials, seed.wrapping_add(1), 1.0)?;
    let z_naive = (naive.estimate - p10) / naive.std_error;
    let z_tilted = (tilted.estimate - p16) / tilted.std_error;
    // Acceptances a naive run of the same size would expect.
    let naive_count = tilted_trials as f64 * p16;
    let ratio = tilted.ess / naive_count;
    c.num("p10_dp", p10);
    c.num("p10_naive", naive.estimate);
    c.num("p10_naive_se", naive.std_error);
    c.num("p10_z", z_naive);
    c.num("p16_dp", p16);
    c.num("p16_tilted", tilted.estimate);
    c.num("p16_tilted_se", tilted.std_error);
    c.num("p16_z", z_tilted);
    c.num("tilted_ess", tilted.ess);
    c.num("expected_naive_acceptances", naive_count);
    c.num("ess_ratio", ratio);
    c.require(z_naive.abs() < 3.0, format!("naive p(10,0) off by {z_naive:.2} SE"));
    c.require(z_tilted.abs() < 3.0, format!("tilted p(16,6) off by {z_tilted:.2} SE"));
    c.require(ratio >= 100.0, format!("tilted ESS {:.1} is only {ratio:.2}x the naive count {naive_count:.2}", tilted.ess));
    Ok(c)
}

fn derivative_form(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let n = 100;
    let t = TailTable::for_depth(n, 64.0, 0.01)?;
    let us = steps(8.0, 64.0, 4.0);
    let r: Vec<f64> = us
        .iter()
        .map(|&u| Ok(-t.dlog_p(n, u)? - (u - C0 * u.log2())))
        .collect::<Result<_, HardwallError>>()?;
    let half = r.len() / 2;
    let worst = max_of(r.iter().map(|x| x.abs()));
    let (lower, upper) = (max_of(r[..half].iter().map(|x| x.abs())), max_of(r[half..].iter().map(|x| x.abs())));
    c.put("u", us.clone());
    c.put("residual", r.clone());
    c.num("max_abs_residual", worst);
    c.num("sup_lower_half", lower);
    c.num("sup_upper_half", upper);
    c.require(worst <= 5.0, format!("max |r| = {worst:.3} > 5"));
    c.require(upper <= lower + 1.0, format!("|r| grows: upper half {upper:.3} vs lower half {lower:.3}"));
    Ok(c)
}

fn theta_band(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let n = 256;
    let us = steps(16.0, 128.0, 4.0);
    let band = |step: f64| -> Result<(f64, f64), HardwallError> {
        let t = TailTable::for_depth(n, 128.0, step)?;
        let mut r = Vec::with_capacity(us.len());
        for &u in &us {
            let up = reduced_height(u);
            r.push((-t.log_p(n, u)? - 0.5 * up * up) / u);
        }
        Ok((min_of(r.iter().copied()), max_of(r.iter().copied())))
    };
    let (lo1, hi1) = band(0.02)?;
    let (lo2, hi2) = band(0.01)?;
    let width = hi2 - lo2;
    let shift = (lo1 - lo2).abs().max((hi1 - hi2).abs());
    c.put("band_step_0.02", vec![lo1, hi1]);
    c.put("band_step_0.01", vec![lo2, hi2]);
    c.num("width", width);
    c.num("halving_shift", shift);
    c.require(width <= 4.0, format!("band width {width:.3} > 4"));
    c.require(shift < 0.5, format!("band moves by {shift:.3} under step halving"));
    Ok(c)
}

fn derivative_identity(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let t = TailTable::for_depth(100, 40.0, 0.01)?;
    for u in [16.0, 32.0] {
        let d = derivative_identity_check(&t, 100, u)?;
        c.num(&format!("residual_u{u}"), d.residual);
        c.num(&format!("minus_dlog_p_u{u}"), d.minus_dlog_p);
        c.num(&format!("scaled_mean_u{u}"), d.scaled_mean);
        c.require(d.residual < 0.05, format!("residual {:.4} at u = {u}", d.residual));
    }
    Ok(c)
}

fn repulsion_profile(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let n = 64;
    let u = m_value(n);
    let ln = floor_log2(n);
    let target = m_value(n - ln);
    let l = ln + 10;
    let t = TailTable::for_depth(n, u + 5.0, 0.02)?;
    let rows = conditional_mean_profile(&t, n, u, l)?;
    let inner = max_of(rows.iter().filter(|r| r.k <= ln).map(|r| (r.mean - target * (1.0 - 0.5f64.powi(r.k as i32))).abs()));
    let plateau = max_of(rows.iter().filter(|r| r.k >= ln).map(|r| (r.mean - target).abs()));
    c.put("mean", rows.iter().map(|r| r.mean).collect::<Vec<_>>());
    c.num("max_deviation_rise", inner);
    c.num("max_deviation_plateau", plateau);
    c.require(inner <= 5.0, format!("rise deviates by {inner:.3}"));
    c.require(plateau <= 5.0, format!("plateau deviates by {plateau:.3}"));
    Ok(c)
}

fn deviation_tails(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let n = 64;
    let t = TailTable::for_depth(n, m_value(n) + 5.0, 0.02)?;
    let devs = steps(4.0, 20.0, 1.0);
    let d = hat_h_tails(&t, n, floor_log2(n), &devs)?;
    let up: Vec<f64> = d.rows.iter().map(|&(s, a, _)| -a / (s * s / s.log2())).collect();
    let down: Vec<f64> = d.rows.iter().map(|&(s, _, b)| -b / (s * s)).collect();
    for (name, r) in [("upper", &up), ("lower", &down)] {
        let (lo, hi) = (min_of(r.iter().copied()), max_of(r.iter().copied()));
        c.put(&format!("{name}_ratio_range"), vec![lo, hi]);
        let ok = lo > 0.0 && hi.is_finite() && hi / lo <= 20.0;
        c.require(ok, format!("{name} ratio spans [{lo:.3}, {hi:.3}]"));
    }
    Ok(c)
}

fn covariances(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let n = 64;
    let ln = floor_log2(n);
    let near: Vec<usize> = (ln..=n).step_by(8).collect();
    let far: Vec<usize> = (0..).map(|j| ln as isize - 2 - 4 * j).take_while(|&d| d >= 0).map(|d| d as usize).collect();
    let t = TailTable::for_depth(n, m_value(n) + 1.0, 0.02)?;
    let all: Vec<usize> = near.iter().chain(&far).copied().collect();
    let cov = pair_covariance_tree(&t, n, &all)?;
    let (cn, cf) = cov.split_at(near.len());
    let dev = max_of(cn.iter().map(|x| (x.covariance - (x.depth_meet - ln) as f64).abs()));
    c.put("near_depths", near.clone());
    c.put("near_covariance", cn.iter().map(|x| x.covariance).collect::<Vec<_>>());
    c.num("near_max_deviation", dev);
    c.require(dev <= 5.0, format!("near covariances deviate by {dev:.3}"));

    c.put("far_depths", far.clone());
    c.put("far_covariance", cf.iter().map(|x| x.covariance).collect::<Vec<_>>());
    if cf.len() < 2 || cf.iter().any(|x| x.covariance == 0.0) {
        c.require(false, "far covariances contain an exact zero (root meeting) or too few points; log-linear fit undefined");
    } else {
        let gens: Vec<f64> = cf.iter().map(|x| (ln - x.depth_meet) as f64).collect();
        let logs: Vec<f64> = cf.iter().map(|x| x.covariance.abs().ln()).collect();
        let fit = fit_line(&gens, &logs);
        c.num("far_slope", fit.slope);
        c.num("far_r_squared", fit.r_squared);
        c.require(fit.slope <= -0.1 && fit.r_squared >= 0.9, format!("far fit slope {:.3}, R² {:.3}", fit.slope, fit.r_squared));
    }
    Ok(c)
}

fn localized_tails(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let ts = steps(2.0, 8.0, 0.5);
    let g = GridSpec::covering(-20.0, 20.0, 0.01)?;
    let n = 128;
    let u = m_value(n);
    let table = TailTable::for_depth(n, u + 5.0, 0.02)?;
    for l in [20, 40] {
        let quad = ChainSpec::new(g, 0.0, 1.0, vec![LogGridFunction::from_fn(g, |w| -0.5 * w * w)?; l])?;
        let spine = recenter_unchecked(&table, &build_spine(&table, n, l, u)?)?;
        for (name, spec) in [("quadratic", &quad), ("spine", &spine.spec)] {
            let key = format!("{name}_l{l}");
            // Narrowest neutral zone outside which every site potential grows.
            let b = (1..=30).map(f64::from).find(|&b| check_growth(spec, b).is_ok());
            let Some(b) = b else {
                c.require(false, format!("{key}: potentials do not grow outside any [-b, b] with b <= 30"));
                continue;
            };
            c.num(&format!("{key}_neutral_zone"), b);
            match pinned_tail(spec, b, &ts) {
                Ok(p) => {
                    c.num(&format!("{key}_slope"), p.fit.slope);
                    c.num(&format!("{key}_r_squared"), p.fit.r_squared);
                    c.num(&format!("{key}_growth_a"), p.growth.a);
                    let ok = p.fit.slope <= -0.3 && p.fit.r_squared >= 0.95;
                    c.require(ok, format!("{key}: slope {:.3}, R² {:.3}", p.fit.slope, p.fit.r_squared));
                }
                Err(e) => c.require(false, format!("{key}: {e}")),
            }
        }
    }
    Ok(c)
}

fn tv_decay(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let n = 128;
    let u = m_value(n);
    let l = 40;
    let t = TailTable::for_depth(n, u + 5.0, 0.02)?;
    let r = recenter_unchecked(&t, &build_spine(&t, n, l, u)?)?;
    let sc = SolvedChain::solve(r.spec)?;
    let tv = sc.tv_curve(0, 4.0, -4.0, l)?;
    let same = sc.tv_curve(0, 4.0, 4.0, l)?;
    let (js, logs): (Vec<f64>, Vec<f64>) = (10..=30).map(|j| (j as f64, tv[j - 1].ln())).unzip();
    let fit = fit_line(&js, &logs);
    let identical = same.iter().all(|&x| x == 0.0);
    c.put("tv", tv.clone());
    c.num("slope", fit.slope);
    c.num("r_squared", fit.r_squared);
    c.put("same_start_zero", identical);
    c.require(fit.slope <= -0.05 && fit.r_squared >= 0.9, format!("log TV slope {:.4}, R² {:.3}", fit.slope, fit.r_squared));
    c.require(identical, "identical starts give nonzero TV");
    Ok(c)
}

fn free_energy(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let g = GridSpec::covering(-12.0, 12.0, 0.01)?;
    let quad = LogGridFunction::from_fn(g, |u| -u * u)?;
    let g1 = fe_step(&FreeEnergyCurve::base(&quad))?.g_star;
    let want = -0.5 * 3f64.ln();
    c.num("quad_g1", g1);
    c.num("quad_g1_error", (g1 - want).abs());
    c.require((g1 - want).abs() < 1e-4, format!("G_1* = {g1:.6}, want {want:.6}"));

    let theta = |step: f64| -> Result<(f64, usize), HardwallError> {
        let pinf = p_infinity(200, -30.0, 12.0, step, 1e-3)?;
        let pot: PotentialSpec = brw_theta_potential(0.0, &pinf.curve)?;
        let lim = g_star_limit(&pot, 1e-3, 14)?;
        Ok((lim.g_star, lim.k_reached))
    };
    match (theta(0.02), theta(0.01)) {
        (Ok((a, ka)), Ok((b, kb))) => {
            c.num("theta_g_star_step_0.02", a);
            c.num("theta_g_star_step_0.01", b);
            c.put("theta_k_reached", vec![ka, kb]);
            c.num("theta_halving_shift", (a - b).abs());
            c.require((a - b).abs() < 2e-3, format!("theta limit moves by {:.2e} under halving", (a - b).abs()));
        }
        (a, b) => {
            for r in [a, b] {
                if let Err(e) = r {
                    c.require(false, format!("theta potential: {e}"));
                }
            }
        }
    }
    Ok(c)
}

/// Small configurations of every computing subcommand.
pub const DETERMINISM_RUNS: &[&[&str]] = &[
    &["tails", "--n", "20", "--u", "-2:8:2"],
    &["tails", "--n", "12", "--u", "0:6:3", "--format", "json"],
    &["theta", "--n", "32", "--u", "4:16:4"],
    &["profile", "--n", "16"],
    &["covariance", "--n", "16", "--meet", "0:16:4"],
    &["kernel", "--n", "64", "--v", "-3:3:1"],
    &["tv", "--n", "32", "--v", "2", "--vprime", "-2", "--l", "10"],
    &["free-energy", "--potential", "quad", "--grid-step", "0.05"],
    &["sample", "--n", "8", "--u", "1:3:1", "--method", "tilted", "--trials", "4000", "--seed", "7"],
    &["sample", "--n", "6", "--u", "0", "--method", "naive", "--trials", "4000", "--seed", "7", "--format", "json"],
];

fn determinism(_: u64) -> Result<Check, HardwallError> {
    let mut c = Check::new();
    let mut hashes = Map::new();
    for args in DETERMINISM_RUNS {
        let label = args.join(" ");
        let cli = match Cli::try_parse_from(std::iter::once("hardwall").chain(args.iter().copied())) {
            Ok(x) => x,
            Err(e) => {
                c.require(false, format!("{label}: {e}"));
                continue;
            }
        };
        let run = || crate::render(&cli).map(|r| r.bytes);
        match (run(), run()) {
            (Ok(a), Ok(b)) => {
                c.require(a == b, format!("{label}: outputs differ"));
                hashes.insert(label, json!(output::content_hash(&a)));
            }
            (Err(e), _) | (_, Err(e)) => c.require(false, format!("{label}: {e}")),
        }
    }
    c.put("output_sha256", Value::Object(hashes));
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection() {
        assert_eq!(select(None).unwrap().len(), 13);
        let ids: Vec<u8> = select(Some("tails")).unwrap().iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![1, 2, 4, 5]);
        let ids: Vec<u8> = select(Some("12,monte-carlo")).unwrap().iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![3, 12]);
        assert!(select(Some("nope")).is_err());
        assert!(select(Some(",")).is_err());
    }

}
