use hardwall_core::mc::{estimate_p, Method};
use hardwall_core::model::{m_value, C0};
use hardwall_core::tails::{p_infinity, tail_step, theta_profile, TailCurve, TailTable};
use hardwall_core::GridSpec;

fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
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

/// P(min over the 2^n leaves >= v), by nesting the one-generation identity.
fn brute(n: usize, v: f64) -> f64 {
    match n {
        0 => (v <= 0.0) as u8 as f64,
        1 => big_phi(-v).powi(2),
        _ => gauss_avg(|z| brute(n - 1, v - z)).powi(2),
    }
}

#[test]
fn shallow_curves_match_nested_quadrature() {
    let t = TailTable::for_depth(3, 5.0, 0.01).unwrap();
    for n in 1..=3 {
        let c = t.curve(n).unwrap();
        let g = c.grid();
        let mut checked = 0;
        for i in (0..g.count()).step_by(37) {
            let v = g.point(i);
            let f = c.f.values()[i];
            if f <= -30.0 {
                continue;
            }
            let exact = brute(n, v).ln();
            assert!((f - exact).abs() < 1e-6, "n={n} v={v}: {f} vs {exact}");
            checked += 1;
        }
        assert!(checked > 20);
    }
}

#[test]
fn one_level_is_closed_form() {
    let t = TailTable::for_depth(1, 6.0, 0.01).unwrap();
    assert!((t.log_p(1, 0.0).unwrap() - 2.0 * big_phi(C0).ln()).abs() < 1e-9);
    assert!((t.log_p(1, 0.0).unwrap().exp() - 0.7753).abs() < 1e-4);
    for i in 0..=80 {
        let u = -4.0 + 0.1 * i as f64;
        let exact = 2.0 * big_phi(m_value(1) - u).ln();
        assert!((t.log_p(1, u).unwrap() - exact).abs() < 1e-6, "u={u}");
    }
}

#[test]
fn curve_invariants() {
    let t = TailTable::for_depth(50, 10.0, 0.02).unwrap();
    for n in 1..=50 {
        let c = t.curve(n).unwrap();
        let f = c.f.values();
        assert!(f.iter().all(|&x| x <= 0.0));
        assert!(f.windows(2).all(|w| w[1] <= w[0]), "F_{n} not monotone");
        assert!(f[0].abs() < 1e-6, "F_{n} at the lower edge: {}", f[0]);
        for (a, b) in f.iter().zip(c.fhat().values()) {
            assert!(*a == 2.0 * b || (a.is_infinite() && b.is_infinite()));
        }
    }
    for n in [5, 20, 50] {
        let ps: Vec<f64> = (0..=120).map(|i| t.log_p(n, -5.0 + 0.125 * i as f64).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.log_p(n, -20.0).unwrap().abs() < 1e-6);
    }
}

#[test]
fn zero_curve_stays_zero() {
    let g = GridSpec::covering(-10.0, 10.0, 0.05).unwrap();
    let mut c = tail_step(&TailCurve::root(g)).unwrap();
    c.f = hardwall_core::LogGridFunction::constant(g, 0.0);
    c.complement = hardwall_core::LogGridFunction::constant(g, f64::NEG_INFINITY);
    let next = tail_step(&c).unwrap();
    assert!(next.f.values().iter().all(|&x| x.abs() < 1e-12));
}

#[test]
fn left_tail_bounds() {
    let t = TailTable::for_depth(30, 10.0, 0.01).unwrap();
    assert!(t.log_q(30, -25.0).unwrap().abs() < 1e-9);
    let ratios: Vec<f64> = (0..=21)
        .map(|i| {
            let u = 0.25 * i as f64;
            t.log_q(30, u).unwrap().exp() / ((u + 1.0) * (-C0 * u).exp())
        })
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    assert!(lo > 0.0 && hi / lo < 2.0, "q/((u+1)e^(-c0 u)) in [{lo}, {hi}]");
}

#[test]
fn derivative_bounds() {
    let t = TailTable::for_depth(200, 12.0, 0.02).unwrap();
    let mut c_fit = f64::NEG_INFINITY;
    for n in [5, 30, 200] {
        assert!(t.dlog_p(n, -20.0).unwrap().abs() < 1e-6);
        for i in 0..=88 {
            let u = -10.0 + 0.25 * i as f64;
            let d = t.dlog_p(n, u).unwrap();
            assert!(d <= 0.0, "n={n} u={u} d={d}");
            c_fit = c_fit.max(-d - 2.0 * u.max(0.0));
        }
    }
    assert!(c_fit < 2.0, "fitted C = {c_fit}");
}

#[test]
fn gaussian_lower_envelope() {
    let t = TailTable::for_depth(200, 10.0, 0.02).unwrap();
    let mut log_c = f64::INFINITY;
    for n in 1..=200usize {
        for i in 0..=60 {
            let u = -5.0 + 0.25 * i as f64;
            let env = -u.max(0.0).powi(2) / (2.0 - 2f64.powi(1 - n as i32));
            log_c = log_c.min(t.log_p(n, u).unwrap() - env);
        }
    }
    assert!(log_c > -3.0, "fitted ln c = {log_c}");
}

#[test]
fn limit_curve() {
    let a = p_infinity(200, -5.0, 5.0, 0.02, 1e-3).unwrap();
    assert!(a.cauchy_gaps.windows(2).all(|w| w[1].1 <= w[0].1), "Cauchy gaps not decreasing");
    let edge = p_infinity(60, -30.0, 5.0, 0.02, 1e-2).unwrap();
    assert!(edge.curve.values()[0].abs() < 1e-9);
    let b = p_infinity(400, -5.0, 5.0, 0.02, 1e-3).unwrap();
    let gap = a.curve.values().iter().zip(b.curve.values()).map(|(x, y)| (x.exp() - y.exp()).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-4, "depth 200 and 400 limit curves differ by {gap}");
}

#[test]
fn wall_and_theta_profile() {
    let t = TailTable::for_depth(128, m_value(128) + 1.0, 0.02).unwrap();
    let us: Vec<f64> = (2..=16).map(|i| 4.0 * i as f64).collect();
    let prof = theta_profile(&t, 64, &us).unwrap();
    for r in &prof.rows {
        assert!(r.residual.is_finite() && r.residual.abs() < 3.0, "u={} residual {}", r.u, r.residual);
    }
    let excess: Vec<f64> = [32usize, 64, 128]
        .iter()
        .map(|&n| {
            let p = theta_profile(&t, n, &[8.0]).unwrap();
            (p.wall_neg_log_p - p.wall_leading) / n as f64
        })
        .collect();
    assert!(excess.iter().all(|&e| (0.5..3.0).contains(&e)), "{excess:?}");
}

#[test]
fn monte_carlo_agreement() {
    let t = TailTable::for_depth(10, 6.0, 0.01).unwrap();
    let p = t.log_p(10, 2.0).unwrap().exp();
    let mc = estimate_p(10, 2.0, Method::Naive, 1_000_000, 11, 1.0).unwrap();
    assert!((mc.estimate - p).abs() < 3.0 * mc.std_error, "p(10,2): dp {p} mc {} ± {}", mc.estimate, mc.std_error);

    let q = t.log_q(5, 1.0).unwrap().exp();
    let mc = estimate_p(5, -1.0, Method::Naive, 200_000, 12, 1.0).unwrap();
    assert!((1.0 - mc.estimate - q).abs() < 3.0 * mc.std_error, "q(5,1): dp {q} mc {}", 1.0 - mc.estimate);
}
