//! Constants of the binary branching random walk and harmonic extensions on the tree.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// √(2 ln 2), the speed of the minimum.
pub const C0: f64 = 1.177_410_022_515_474_7;

/// Centering sequence m(n) = c0·n − (3/2)·ln(n)/c0, with m(0) = 0.
pub fn m_value(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    C0 * n - 1.5 / C0 * n.ln()
}

/// ⌊log₂ n⌋ for n ≥ 1 (0 for n = 0).
pub fn floor_log2(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        (usize::BITS - 1 - n.leading_zeros()) as usize
    }
}

/// Fractional part of log₂ s; 0 for s ≤ 0.
pub fn frac_log2(s: f64) -> f64 {
    if !(s > 0.0) {
        return 0.0;
    }
    let l = s.log2();
    let f = l - l.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// ⌊log₂ u⌋ clipped at zero, so every u < 2 maps to 0.
pub fn level_of(u: f64) -> usize {
    if u >= 2.0 {
        u.log2().floor() as usize
    } else {
        0
    }
}

/// u − c0·⌊log₂ u⌋, the height left after the localisation levels.
pub fn reduced_height(u: f64) -> f64 {
    u - C0 * level_of(u) as f64
}

/// Depth split n = l_n + n′ with l_n = ⌊log₂ n⌋.
pub fn depth_split(n: usize) -> (usize, usize) {
    let l = floor_log2(n);
    (l, n - l)
}

/// Gambler's-ruin weight (1 − 2^{-k}) / (1 − 2^{-n}).
pub fn rho(n: usize, k: usize) -> Result<f64> {
    if n == 0 {
        return invalid("rho needs n >= 1");
    }
    if k > n {
        return invalid(format!("rho needs k <= n (k={k}, n={n})"));
    }
    Ok((1.0 - 0.5f64.powi(k as i32)) / (1.0 - 0.5f64.powi(n as i32)))
}

/// Harmonic extension to depths 0..=k of the data 0 at the root and v on depth k.
pub fn harmonic_profile(v: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return invalid("harmonic profile needs k >= 1");
    }
    (0..=k).map(|j| rho(k, j).map(|r| r * v)).collect()
}

/// Half the Dirichlet form of the harmonic profile: ½v²(1 + 1/(2^k − 1)).
pub fn dirichlet_energy(v: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return invalid("dirichlet energy needs k >= 1");
    }
    Ok(0.5 * v * v * (1.0 + 1.0 / ((1u64 << k) as f64 - 1.0)))
}

/// Centering of the conditioned field: m(n′)(1 − 2^{-j}) above depth l_n, m(n′) below.
pub fn conditional_center(n: usize, depth: usize) -> f64 {
    let (l, np) = depth_split(n);
    let m = m_value(np);
    if depth < l {
        m * (1.0 - 0.5f64.powi(depth as i32))
    } else {
        m
    }
}

/// A vertex depth, or the depth of the deepest common ancestor of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeCoord {
    pub depth: usize,
    pub depth_meet: Option<usize>,
}

impl TreeCoord {
    pub fn vertex(depth: usize) -> Self {
        Self { depth, depth_meet: None }
    }

    pub fn pair(depth: usize, depth_meet: usize) -> Result<Self> {
        if depth_meet > depth {
            return invalid(format!("meeting depth {depth_meet} exceeds depth {depth}"));
        }
        Ok(Self { depth, depth_meet: Some(depth_meet) })
    }
}

/// Heap indexing of the binary tree: root 0, children 2i+1 and 2i+2.
pub mod heap {
    #[inline]
    pub fn node_count(depth: usize) -> usize {
        (1usize << (depth + 1)) - 1
    }
    #[inline]
    pub fn first_at(depth: usize) -> usize {
        (1usize << depth) - 1
    }
    #[inline]
    pub fn parent(i: usize) -> usize {
        (i - 1) / 2
    }
    #[inline]
    pub fn depth_of(i: usize) -> usize {
        super::floor_log2(i + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert!((C0 * C0 - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(m_value(0), 0.0);
        assert!((m_value(1) - 1.177410).abs() < 1e-6);
        assert!((m_value(4) - (4.0 * C0 - 1.5 * 4f64.ln() / C0)).abs() < 1e-12);
        assert!((m_value(4) - 2.9435).abs() < 1e-4);
    }

    #[test]
    fn log_helpers() {
        assert_eq!(frac_log2(8.0), 0.0);
        assert_eq!(frac_log2(-3.0), 0.0);
        assert!((frac_log2(6.0) - 0.584963).abs() < 1e-6);
        assert_eq!(floor_log2(64), 6);
        assert_eq!(floor_log2(100), 6);
        assert_eq!(level_of(1.5), 0);
        assert_eq!(level_of(16.0), 4);
        assert_eq!(depth_split(100), (6, 94));
    }

    #[test]
    fn harmonic_weights() {
        assert_eq!(rho(5, 0).unwrap(), 0.0);
        assert_eq!(rho(5, 5).unwrap(), 1.0);
        assert!((rho(3, 1).unwrap() - 4.0 / 7.0).abs() < 1e-15);
        assert!(rho(3, 4).is_err());
        assert!(harmonic_profile(0.0, 4).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(harmonic_profile(1.0, 1).unwrap(), vec![0.0, 1.0]);
        assert!((harmonic_profile(2.0, 3).unwrap()[1] - 8.0 / 7.0).abs() < 1e-15);
        assert_eq!(dirichlet_energy(0.0, 3).unwrap(), 0.0);
        assert!((dirichlet_energy(1.0, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn heap_layout() {
        assert_eq!(heap::node_count(2), 7);
        assert_eq!(heap::first_at(3), 7);
        assert_eq!(heap::parent(6), 2);
        assert_eq!(heap::depth_of(0), 0);
        assert_eq!(heap::depth_of(6), 2);
        assert_eq!(heap::depth_of(7), 3);
    }
}
