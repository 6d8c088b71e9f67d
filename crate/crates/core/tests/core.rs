use hardwall_core::convolve::{log_convolve_gaussian, Extension};
use hardwall_core::model::{dirichlet_energy, harmonic_profile, heap, m_value, rho, C0};
use hardwall_core::special::log_ndtr;
use hardwall_core::{GridSpec, LogGridFunction};
use proptest::prelude::*;

/// Half the sum over tree edges of squared profile differences, node by node.
fn edge_sum(v: f64, k: usize) -> f64 {
    let prof = harmonic_profile(v, k).unwrap();
    let mut s = 0.0;
    for i in 1..heap::node_count(k) {
        let d = prof[heap::depth_of(i)] - prof[heap::depth_of(heap::parent(i))];
        s += d * d;
    }
    0.5 * s
}

#[test]
fn centering_examples() {
    assert_eq!(m_value(0), 0.0);
    assert!((m_value(1) - C0).abs() < 1e-15);
    assert!((m_value(4) - 2.9435).abs() < 1e-4);
    assert!((rho(3, 1).unwrap() - 4.0 / 7.0).abs() < 1e-15);
}

#[test]
fn energy_matches_edge_sum() {
    for k in 1..=12 {
        for v in [0.3, 1.0, 2.0, -4.5] {
            assert!((dirichlet_energy(v, k).unwrap() - edge_sum(v, k)).abs() < 1e-10, "k={k} v={v}");
        }
    }
    assert!((dirichlet_energy(2.0, 10).unwrap() - edge_sum(2.0, 10)).abs() < 1e-10);
}

#[test]
fn profile_is_harmonic_inside() {
    for k in 2..=12 {
        let p = harmonic_profile(1.7, k).unwrap();
        for j in 1..k {
            assert!((3.0 * p[j] - p[j - 1] - 2.0 * p[j + 1]).abs() < 1e-10, "k={k} j={j}");
        }
    }
}

#[test]
fn convolution_oracles() {
    let g = GridSpec::covering(-12.0, 12.0, 0.01).unwrap();
    let quad = LogGridFunction::from_fn(g, |v| -v * v / 2.0).unwrap();
    let (c, _) = log_convolve_gaussian(&quad, 1.0, Extension::Linear, Extension::Linear).unwrap();
    for (i, v) in g.points().enumerate().filter(|(_, v)| v.abs() < 6.0) {
        assert!((c.values()[i] - (-v * v / 4.0 - 0.5 * 2f64.ln())).abs() < 1e-9, "v={v}");
    }
    let wall = LogGridFunction::indicator_at_most(g, 0.0);
    let (c, _) = log_convolve_gaussian(&wall, 1.0, Extension::Clamp, Extension::NegInfinity).unwrap();
    for (i, v) in g.points().enumerate().filter(|(_, v)| v.abs() < 5.0) {
        // The cell-averaged wall is second order in the step.
        assert!((c.values()[i] - log_ndtr(-v)).abs() < 1e-4 * (1.0 - log_ndtr(-v)), "v={v}");
    }
}

fn smooth(a: f64, b: f64, c: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| -a * x * x + b * (c * x).sin()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_shape(lo in -50.0f64..50.0, step in 0.001f64..1.0, count in 2usize..5000) {
        let g = GridSpec::new(lo, step, count).unwrap();
        prop_assert!((g.hi() - (lo + step * (count - 1) as f64)).abs() < 1e-9 * (1.0 + g.hi().abs()));
        prop_assert_eq!(g.count(), count);
    }

    #[test]
    fn energy_is_quadratic(v in -10.0f64..10.0, k in 1usize..10) {
        let e = dirichlet_energy(v, k).unwrap();
        prop_assert!((e - edge_sum(v, k)).abs() < 1e-10 * (1.0 + e));
    }

    #[test]
    fn convolution_is_monotone(a in 0.05f64..1.0, b in -1.0f64..1.0, c in 0.1f64..3.0, bump in 0.0f64..2.0, at in -5.0f64..5.0) {
        let g = GridSpec::covering(-15.0, 15.0, 0.05).unwrap();
        let f = LogGridFunction::from_fn(g, smooth(a, b, c)).unwrap();
        let f2 = f.map(|x, y| y + bump * (-(x - at) * (x - at)).exp()).unwrap();
        let (o1, _) = log_convolve_gaussian(&f, 1.0, Extension::Linear, Extension::Linear).unwrap();
        let (o2, _) = log_convolve_gaussian(&f2, 1.0, Extension::Linear, Extension::Linear).unwrap();
        for (x, y) in o1.values().iter().zip(o2.values()) {
            // Exact up to quadrature error, which the adaptive stride moves around.
            prop_assert!(*y >= *x - 1e-9, "drop {}", x - y);
        }
    }

    #[test]
    fn convolution_commutes_with_constants(a in 0.05f64..1.0, b in -1.0f64..1.0, c in 0.1f64..3.0, shift in -50.0f64..50.0) {
        let g = GridSpec::covering(-15.0, 15.0, 0.05).unwrap();
        let f = LogGridFunction::from_fn(g, smooth(a, b, c)).unwrap();
        let (o1, _) = log_convolve_gaussian(&f, 0.7, Extension::Linear, Extension::Linear).unwrap();
        let (o2, _) = log_convolve_gaussian(&f.add_constant(shift), 0.7, Extension::Linear, Extension::Linear).unwrap();
        for (x, y) in o1.values().iter().zip(o2.values()) {
            prop_assert!((y - x - shift).abs() < 1e-10 * (1.0 + x.abs() + shift.abs()));
        }
    }
}


