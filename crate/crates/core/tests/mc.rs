use hardwall_core::mc::{estimate_conditional, estimate_p, sample_tilted, sample_tree, Method, TiltPlan};
use hardwall_core::model::{dirichlet_energy, heap};
use hardwall_core::tails::TailTable;

fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn tree_moments() {
    let draws: Vec<Vec<f64>> = (0..100_000).map(|s| sample_tree(4, s).unwrap().values).collect();
    assert!(draws.iter().all(|v| v[0] == 0.0 && v.len() == 31));
    for d in 1..=4 {
        let i = heap::first_at(d);
        let sq: Vec<f64> = draws.iter().map(|v| v[i] * v[i]).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - d as f64).abs() < 3.0 * se, "Var at depth {d}: {m} ± {se}");
    }
    // Nodes 15 and 17 share the ancestor 3, at depth 2.
    let prod: Vec<f64> = draws.iter().map(|v| v[15] * v[17]).collect();
    let (m, se) = mean_se(&prod);
    assert!((m - 2.0).abs() < 3.0 * se, "Cov {m} ± {se}");
    assert_eq!(sample_tree(6, 42).unwrap(), sample_tree(6, 42).unwrap());
    assert_ne!(sample_tree(6, 42).unwrap().values, sample_tree(6, 43).unwrap().values);
}

#[test]
fn tilt_plan_energy() {
    for (k, v) in [(1, 0.5), (3, 2.0), (7, -1.3)] {
        let p = TiltPlan::new(k, v).unwrap();
        assert!((p.energy - dirichlet_energy(v, k).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn tilted_weights_average_to_one() {
    let plan = TiltPlan::new(2, 1.5).unwrap();
    let w: Vec<f64> = (0..100_000).map(|s| sample_tilted(3, &plan, s).unwrap().log_weight.exp()).collect();
    let (m, se) = mean_se(&w);
    assert!((m - 1.0).abs() < 3.0 * se, "E[w] = {m} ± {se}");
}

#[test]
fn tilted_gaussian_tail() {
    let plan = TiltPlan::new(1, 1.0).unwrap();
    let x: Vec<f64> = (0..100_000)
        .map(|s| {
            let t = sample_tilted(1, &plan, s).unwrap();
            if t.values[1] > 1.0 {
                t.log_weight.exp()
            } else {
                0.0
            }
        })
        .collect();
    let (m, se) = mean_se(&x);
    assert!((m - big_phi(-1.0)).abs() < 3.0 * se, "{m} ± {se} vs {}", big_phi(-1.0));
    let zero = TiltPlan::new(2, 0.0).unwrap();
    assert!((0..50).all(|s| sample_tilted(4, &zero, s).unwrap().log_weight == 0.0));
}

#[test]
fn naive_estimate_matches_tails() {
    let t = TailTable::for_depth(10, 6.0, 0.01).unwrap();
    let p = t.log_p(10, 0.0).unwrap().exp();
    let mc = estimate_p(10, 0.0, Method::Naive, 200_000, 3, 1.0).unwrap();
    assert!((mc.estimate - p).abs() < 3.0 * mc.std_error, "dp {p} mc {} ± {}", mc.estimate, mc.std_error);
    assert_eq!(mc.ess, mc.accepted as f64);
    let sure = estimate_p(6, -40.0, Method::Naive, 1000, 3, 1.0).unwrap();
    assert_eq!(sure.estimate, 1.0);
    let none = estimate_p(16, 6.0, Method::Naive, 1000, 3, 1.0).unwrap();
    assert_eq!(none.accepted, 0);
    assert_eq!(none.upper_bound, Some(3.0 / 1000.0));
}

#[test]
fn tilted_estimate_matches_tails() {
    let t = TailTable::for_depth(12, 10.0, 0.01).unwrap();
    let p = t.log_p(12, 5.0).unwrap().exp();
    let mc = estimate_p(12, 5.0, Method::Tilted, 20_000, 9, 1.0).unwrap();
    assert!((mc.estimate - p).abs() < 3.0 * mc.std_error, "dp {p} mc {} ± {}", mc.estimate, mc.std_error);
}

#[test]
fn root_is_pinned() {
    for m in [Method::Naive, Method::Tilted] {
        let c = estimate_conditional(5, 2.5, |h: &[f64]| h[0], m, 5000, 1, 1.0).unwrap();
        assert_eq!(c.estimate, 0.0);
    }
}

#[test]
fn naive_and_tilted_agree() {
    let stats: Vec<(&str, Box<dyn Fn(&[f64]) -> f64 + Sync>)> = vec![
        ("tanh leaf", Box::new(|h: &[f64]| h[15].tanh())),
        ("indicator", Box::new(|h: &[f64]| (h[3] > 1.0) as u8 as f64)),
        ("pair", Box::new(|h: &[f64]| (h[7] * h[10]).clamp(-5.0, 5.0))),
    ];
    for (name, f) in &stats {
        let a = estimate_conditional(4, 2.5, f, Method::Naive, 100_000, 21, 1.0).unwrap();
        let b = estimate_conditional(4, 2.5, f, Method::Tilted, 100_000, 22, 1.0).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.estimate - b.estimate).abs() < 3.0 * se, "{name}: {} vs {} (joint se {se})", a.estimate, b.estimate);
    }
    let a = estimate_p(4, 2.5, Method::Naive, 100_000, 23, 1.0).unwrap();
    let b = estimate_p(4, 2.5, Method::Tilted, 100_000, 24, 1.0).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() < 3.0 * se);
}

#[test]
fn conditional_mean_increases_with_threshold() {
    let node = heap::first_at(2);
    let rows: Vec<(f64, f64)> = [-2.0, -1.0, 0.0, 1.0, 2.0]
        .iter()
        .map(|&u| {
            let c = estimate_conditional(5, u, move |h: &[f64]| h[node], Method::Naive, 50_000, 77, 1.0).unwrap();
            (c.estimate, c.std_error)
        })
        .collect();
    for w in rows.windows(2) {
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 >= w[0].0 - 3.0 * se, "{rows:?}");
    }
}

#[test]
fn estimates_are_deterministic() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_p(8, 2.0, Method::Tilted, 5000, 99, 1.0).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    assert_eq!(a.ess.to_bits(), b.ess.to_bits());
}

#[test]
fn depth_cap_is_enforced() {
    assert!(sample_tree(25, 0).is_err());
    assert!(estimate_conditional(25, 0.0, |_: &[f64]| 0.0, Method::Naive, 1, 0, 1.0).is_err());
}
