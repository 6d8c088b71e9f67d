use hardwall_core::chain::{drift_envelope, forward_backward, total_variation, ChainSpec, SolvedChain};
use hardwall_core::mc::{estimate_conditional, Method};
use hardwall_core::model::{heap, level_of, m_value};
use hardwall_core::spine::{
    build_spine, conditional_mean_profile, derivative_identity_check, pair_covariance_tree, recenter, recenter_unchecked,
    DEFAULT_LEVEL_GAP,
};
use hardwall_core::tails::TailTable;
use hardwall_core::LogGridFunction;

fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn single_site_is_a_truncated_gaussian() {
    let t = TailTable::for_depth(1, 6.0, 0.01).unwrap();
    for u in [-1.0, 0.5, 2.0] {
        let s = build_spine(&t, 1, 1, u).unwrap();
        let m = forward_backward(&s.spec).unwrap();
        let a = u - m_value(1);
        let z = big_phi(-a);
        let mean = phi(a) / z;
        let var = 1.0 + a * phi(a) / z - mean * mean;
        // The wall is cell-averaged: error of order step² = 1e-4.
        assert!((m.mean(1) - mean).abs() < 1e-4, "u={u}: {} vs {mean}", m.mean(1));
        assert!((m.variance(1) - var).abs() < 1e-4, "u={u}: {} vs {var}", m.variance(1));
    }
}

#[test]
fn far_threshold_gives_the_free_walk() {
    let t = TailTable::for_depth(10, 6.0, 0.01).unwrap();
    let s = build_spine(&t, 10, 5, -20.0).unwrap();
    let m = forward_backward(&s.spec).unwrap();
    let free = forward_backward(&ChainSpec::free(*s.spec.grid(), 5, 0.0).unwrap()).unwrap();
    for k in 1..=5 {
        let tv = total_variation(m.density(k), free.density(k));
        assert!(tv < 1e-4, "site {k}: TV {tv}");
    }
}

#[test]
fn marginals_are_normalised() {
    let t = TailTable::for_depth(40, 30.0, 0.02).unwrap();
    for (n, l, u) in [(10, 5, 2.0), (20, 20, 0.0), (40, 6, 25.0), (40, 40, m_value(40) - 20.0)] {
        let m = forward_backward(&build_spine(&t, n, l, u).unwrap().spec).unwrap();
        for k in 1..=l {
            let mass = m.density(k).log_integral().exp();
            assert!((mass - 1.0).abs() < 1e-8, "(n,l,u)=({n},{l},{u}) site {k}: mass {mass}");
        }
    }
}

#[test]
fn last_site_mean_increases_with_threshold() {
    let t = TailTable::for_depth(20, 12.0, 0.02).unwrap();
    let means: Vec<f64> = (0..=20)
        .map(|i| {
            let u = -4.0 + 0.75 * i as f64;
            forward_backward(&build_spine(&t, 20, 6, u).unwrap().spec).unwrap().mean(6)
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}

#[test]
fn means_and_second_moments_are_bounded() {
    let t = TailTable::for_depth(64, m_value(64) + 1.0, 0.02).unwrap();
    let mut c_mean = f64::NEG_INFINITY;
    let mut c_var = f64::NEG_INFINITY;
    for n in [16, 64] {
        for u in [-2.0, 0.0, 4.0, 8.0, m_value(n)] {
            let m = forward_backward(&build_spine(&t, n, n, u).unwrap().spec).unwrap();
            for j in 1..=n {
                assert!(m.mean(j) >= 0.0, "n={n} u={u} j={j}: mean {}", m.mean(j));
                c_mean = c_mean.max(m.mean(j) - u.max(0.0));
                let second = m.variance(j) + m.mean(j).powi(2);
                c_var = c_var.max((second - j as f64).abs() / (u * u + 1.0));
            }
        }
    }
    assert!(c_mean < 5.0, "fitted mean constant {c_mean}");
    assert!(c_var < 5.0, "fitted second-moment constant {c_var}");
}

/// Y-marginal against the h-marginal moved by the tilt, on the Y grid.
#[test]
fn recentering_is_a_shift() {
    let t = TailTable::for_depth(100, 70.0, 0.01).unwrap();
    let s = build_spine(&t, 100, 3, 64.0).unwrap();
    let r = recenter(&t, &s, DEFAULT_LEVEL_GAP).unwrap();
    assert_eq!(r.spec.start(), 0.0);
    let mh = forward_backward(&s.spec).unwrap();
    let my = forward_backward(&r.spec).unwrap();
    for k in 1..=3 {
        let shift = s.tilt[k];
        let moved = LogGridFunction::from_fn(*r.spec.grid(), |y| {
            mh.density(k).eval(y + shift).unwrap_or(f64::NEG_INFINITY)
        })
        .unwrap();
        let (moved, _) = moved.normalized().unwrap();
        let tv = total_variation(&moved, my.density(k));
        assert!(tv < 1e-8, "site {k}: TV {tv}");
        assert!((my.mean(k) - (mh.mean(k) - shift)).abs() < 1e-8);
    }
    let too_long = build_spine(&t, 100, 4, 64.0).unwrap();
    assert!(recenter(&t, &too_long, DEFAULT_LEVEL_GAP).is_err());
    assert!(recenter_unchecked(&t, &too_long).is_ok());
}

#[test]
fn recentered_potentials_have_envelopes() {
    let n = 128;
    let u = m_value(n);
    let t = TailTable::for_depth(n, u + 5.0, 0.02).unwrap();
    let s = build_spine(&t, n, 4, u).unwrap();
    let r = recenter(&t, &s, DEFAULT_LEVEL_GAP).unwrap();
    for k in 1..4 {
        let e = r.potential_envelope(k, 200.0);
        assert!(e.lower_slope > 0.0 && e.constant.is_finite(), "site {k}: {e:?}");
    }
}

/// Drift strength of the recentered kernels grows as the branch is kept
/// further from the localisation level.
#[test]
fn drift_strength_grows_with_level_gap() {
    let n = 128;
    let u = m_value(n);
    let t = TailTable::for_depth(n, u + 5.0, 0.02).unwrap();
    let level = level_of(u);
    let mut strengths = Vec::new();
    for gap in [3, 4, 5] {
        let l = level - gap;
        let s = build_spine(&t, n, l, u).unwrap();
        let r = recenter(&t, &s, gap).unwrap();
        let sc = SolvedChain::solve(r.spec.clone()).unwrap();
        let kernels: Vec<_> = (-12..=12).map(|i| sc.step_kernel(l - 1, 0.5 * i as f64).unwrap()).collect();
        let env = drift_envelope(&kernels, 1.0).unwrap();
        assert!(env.inward_below && env.inward_above, "gap {gap}: {:?}", (env.a, env.d));
        strengths.push(env.strength);
    }
    assert!(strengths.windows(2).all(|w| w[1] > w[0]), "{strengths:?}");
}

#[test]
fn derivative_identity() {
    let t = TailTable::for_depth(100, 40.0, 0.01).unwrap();
    for u in [16.0, 32.0] {
        let c = derivative_identity_check(&t, 100, u).unwrap();
        assert!(c.residual < 0.05, "u={u}: {c:?}");
    }
    let coarse = TailTable::for_depth(100, 40.0, 0.04).unwrap();
    let fine = TailTable::for_depth(100, 40.0, 0.02).unwrap();
    let rc = derivative_identity_check(&coarse, 100, 16.0).unwrap().residual;
    let rf = derivative_identity_check(&fine, 100, 16.0).unwrap().residual;
    assert!(rf <= rc, "residual {rc} at step 0.04 and {rf} at step 0.02");
}

#[test]
fn profile_starts_at_the_root() {
    let t = TailTable::for_depth(100, 20.0, 0.02).unwrap();
    let p = conditional_mean_profile(&t, 100, 16.0, 4).unwrap();
    assert_eq!(p[0].mean, 0.0);
    let target = 16.0 - hardwall_core::model::C0 * 4.0;
    assert!((p[4].mean - target).abs() <= 5.0, "{} vs {target}", p[4].mean);
}

#[test]
fn site_means_match_monte_carlo() {
    let t = TailTable::for_depth(10, 6.0, 0.01).unwrap();
    let m = forward_backward(&build_spine(&t, 10, 5, 2.0).unwrap().spec).unwrap();
    for k in 1..=5 {
        // Every depth-k vertex has the branch law, so average over all of them.
        let (a, b) = (heap::first_at(k), heap::first_at(k + 1));
        let level_mean = move |h: &[f64]| h[a..b].iter().sum::<f64>() / (b - a) as f64;
        let mc = estimate_conditional(10, 2.0, level_mean, Method::Naive, 100_000, 40 + k as u64, 1.0).unwrap();
        assert!(mc.reliable);
        assert!((mc.estimate - m.mean(k)).abs() < 3.0 * mc.std_error, "site {k}: dp {} mc {} ± {}", m.mean(k), mc.estimate, mc.std_error);
    }
}

#[test]
fn tree_covariances() {
    let n = 64;
    let t = TailTable::for_depth(n, m_value(n) + 1.0, 0.02).unwrap();
    let cov = pair_covariance_tree(&t, n, &[0, n]).unwrap();
    assert!(cov[0].covariance.abs() < 0.05);
    let leaf_var = forward_backward(&build_spine(&t, n, n, m_value(n)).unwrap().spec).unwrap().variance(n);
    assert!((cov[1].covariance - leaf_var).abs() < 1e-8);
    assert!((cov[1].covariance - (n - 6) as f64).abs() < 5.0, "leaf variance {}", cov[1].covariance);
}

/// Leaves 7 and 9 of the depth-3 tree meet at depth 1.
#[test]
fn small_tree_covariance_matches_rejection() {
    let t = TailTable::for_depth(3, 6.0, 0.01).unwrap();
    let u = m_value(3);
    let cov = pair_covariance_tree(&t, 3, &[1]).unwrap()[0].covariance;
    let c = forward_backward(&build_spine(&t, 3, 3, u).unwrap().spec).unwrap().mean(3);
    let mc = estimate_conditional(3, u, move |h: &[f64]| (h[7] - c) * (h[9] - c), Method::Naive, 10_000_000, 5, 1.0).unwrap();
    assert!((mc.estimate - cov).abs() < 3.0 * mc.std_error, "dp {cov} mc {} ± {}", mc.estimate, mc.std_error);
}
