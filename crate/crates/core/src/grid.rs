//! Uniform grids and log-valued functions tabulated on them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, HardwallError, Result};

/// Uniform grid `lo + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lo: f64,
    step: f64,
    count: usize,
}

impl GridSpec {
    pub fn new(lo: f64, step: f64, count: usize) -> Result<Self> {
        if !lo.is_finite() || !step.is_finite() || step <= 0.0 {
            return invalid(format!("grid needs finite lo and step > 0 (lo={lo}, step={step})"));
        }
        if count < 2 {
            return invalid("grid needs at least two points");
        }
        Ok(Self { lo, step, count })
    }

    /// Smallest grid starting at `lo` with the given step that reaches `hi`.
    pub fn covering(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(hi > lo) {
            return invalid(format!("empty range [{lo}, {hi}]"));
        }
        let count = ((hi - lo) / step - 1e-9).ceil() as usize + 1;
        Self::new(lo, step, count)
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }
    #[inline]
    pub fn step(&self) -> f64 {
        self.step
    }
    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }
    #[inline]
    pub fn hi(&self) -> f64 {
        self.point(self.count - 1)
    }
    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.point(i))
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - 1e-12 * self.step && x <= self.hi() + 1e-12 * self.step
    }

    /// Fractional index of `x`.
    #[inline]
    pub fn position(&self, x: f64) -> f64 {
        (x - self.lo) / self.step
    }

    /// Index of the grid point nearest to `x`, clamped into range.
    pub fn nearest(&self, x: f64) -> usize {
        let p = self.position(x).round();
        p.clamp(0.0, (self.count - 1) as f64) as usize
    }

    /// Grid of the points `-x`, listed in increasing order.
    pub fn reflected(&self) -> Self {
        Self { lo: -self.hi(), step: self.step, count: self.count }
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self { lo: self.lo + by, ..*self }
    }

    /// Sub-grid of indices `a..=b`.
    pub fn slice(&self, a: usize, b: usize) -> Result<Self> {
        if b >= self.count || a >= b {
            return invalid(format!("bad slice {a}..={b} of {} points", self.count));
        }
        Self::new(self.point(a), self.step, b - a + 1)
    }

    /// Trapezoid weight of point `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.count {
            0.5 * self.step
        } else {
            self.step
        }
    }

    /// Same layout up to floating point noise in `lo` and `step`.
    pub fn same_as(&self, other: &Self) -> bool {
        self.count == other.count
            && (self.step - other.step).abs() <= 1e-12 * self.step
            && (self.lo - other.lo).abs() <= 1e-9 * self.step
    }
}

/// Function values stored as logarithms on a grid; `-inf` marks zero mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGridFunction {
    grid: GridSpec,
    values: Vec<f64>,
}

impl LogGridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.count() {
            return invalid(format!("{} values for {} grid points", values.len(), grid.count()));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(HardwallError::Numerical(format!(
                "log value {} at grid point {} ({})",
                values[i],
                i,
                grid.point(i)
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.points().map(f).collect())
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.count()] }
    }

    /// Log of the indicator of `[c, inf)`, with the straddling grid cell
    /// carrying its covered fraction so quadrature stays second order.
    pub fn indicator_at_least(grid: GridSpec, c: f64) -> Self {
        let h = grid.step();
        let values = grid
            .points()
            .map(|x| {
                let frac = ((x + 0.5 * h - c) / h).clamp(0.0, 1.0);
                frac.ln()
            })
            .collect();
        Self { grid, values }
    }

    /// Log of the indicator of `(-inf, c]`, cell-averaged like [`Self::indicator_at_least`].
    pub fn indicator_at_most(grid: GridSpec, c: f64) -> Self {
        let h = grid.step();
        let values = grid
            .points()
            .map(|x| {
                let frac = ((c - (x - 0.5 * h)) / h).clamp(0.0, 1.0);
                frac.ln()
            })
            .collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let vals = self.grid.points().zip(&self.values).map(|(x, &v)| f(x, v)).collect();
        Self::new(self.grid, vals)
    }

    pub fn scale(&self, c: f64) -> Self {
        let values = self
            .values
            .iter()
            .map(|&v| if v == f64::NEG_INFINITY { v } else { c * v })
            .collect();
        Self { grid: self.grid, values }
    }

    pub fn add_constant(&self, c: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v + c).collect() }
    }

    /// Pointwise sum of log values, i.e. the product of the functions.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(HardwallError::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value (leftmost on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Interpolated value at `x`, or `None` outside the grid.
    ///
    /// Four-point Lagrange on the log values where all four are finite,
    /// linear next to the edges. A cell touching `-inf` is `-inf`.
    pub fn eval(&self, x: f64) -> Option<f64> {
        if !self.grid.contains(x) {
            return None;
        }
        let n = self.values.len();
        let p = self.grid.position(x).clamp(0.0, (n - 1) as f64);
        let i = (p.floor() as usize).min(n - 2);
        let t = p - i as f64;
        if t == 0.0 {
            return Some(self.values[i]);
        }
        let (a, b) = (self.values[i], self.values[i + 1]);
        if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
            return Some(f64::NEG_INFINITY);
        }
        if i >= 1 && i + 2 < n {
            let (z, c) = (self.values[i - 1], self.values[i + 2]);
            if z.is_finite() && c.is_finite() {
                let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
                let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
                let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
                let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
                return Some(w0 * z + w1 * a + w2 * b + w3 * c);
            }
        }
        Some(a + t * (b - a))
    }

    /// Like [`Self::eval`] but an error outside the grid.
    pub fn eval_checked(&self, x: f64, what: &str) -> Result<f64> {
        self.eval(x).ok_or_else(|| HardwallError::OutOfGrid {
            what: what.to_string(),
            x,
            lo: self.grid.lo(),
            hi: self.grid.hi(),
        })
    }

    /// Resample onto another grid. Points beyond the source grid take `outside`.
    pub fn resample(&self, target: GridSpec, outside: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(target, target.points().map(|x| self.eval(x).unwrap_or_else(|| outside(x))).collect())
    }

    /// ln of the trapezoid integral of `exp(f)`.
    pub fn log_integral(&self) -> f64 {
        let m = self.max_value();
        if m == f64::NEG_INFINITY {
            return m;
        }
        let s: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.grid.weight(i) * (v - m).exp())
            .sum();
        m + s.ln()
    }

    /// Shift so that `exp(f)` integrates to one. Returns the shifted function
    /// and the log normaliser that was removed.
    pub fn normalized(&self) -> Result<(Self, f64)> {
        let z = self.log_integral();
        if !z.is_finite() {
            return Err(HardwallError::Numerical("cannot normalise a function with no mass".into()));
        }
        Ok((self.add_constant(-z), z))
    }

    /// Trapezoid probabilities `w_i exp(f_i)` of a normalised log density.
    pub fn cell_masses(&self) -> Vec<f64> {
        self.values.iter().enumerate().map(|(i, &v)| self.grid.weight(i) * v.exp()).collect()
    }

    /// Mean and variance of the density `exp(f)/Z`.
    pub fn moments(&self) -> (f64, f64) {
        let m = self.max_value();
        let (mut s0, mut s1) = (0.0, 0.0);
        for (i, &v) in self.values.iter().enumerate() {
            let w = self.grid.weight(i) * (v - m).exp();
            s0 += w;
            s1 += w * self.grid.point(i);
        }
        let mean = s1 / s0;
        let mut s2 = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let d = self.grid.point(i) - mean;
            s2 += self.grid.weight(i) * (v - m).exp() * d * d;
        }
        (mean, s2 / s0)
    }

    /// Expectation of `g(x)` under the density `exp(f)/Z`.
    pub fn expect(&self, g: impl Fn(usize, f64) -> f64) -> f64 {
        let m = self.max_value();
        let (mut s0, mut s1) = (0.0, 0.0);
        for (i, &v) in self.values.iter().enumerate() {
            let w = self.grid.weight(i) * (v - m).exp();
            if w > 0.0 {
                s0 += w;
                s1 += w * g(i, self.grid.point(i));
            }
        }
        s1 / s0
    }

    /// `ln ∫_t^∞ exp(f)` for a function that vanishes at the grid ends.
    ///
    /// Trapezoid from the first grid point above `t` with its endpoint
    /// correction, plus Simpson on the partial cell, so the error is fourth
    /// order in the step.
    pub fn log_mass_above(&self, t: f64) -> f64 {
        self.log_partial_mass(t, true)
    }

    /// `ln ∫_{-∞}^t exp(f)`, as [`Self::log_mass_above`].
    pub fn log_mass_below(&self, t: f64) -> f64 {
        self.log_partial_mass(t, false)
    }

    fn log_partial_mass(&self, t: f64, above: bool) -> f64 {
        let m = self.max_value();
        let n = self.values.len();
        if m == f64::NEG_INFINITY || n < 3 {
            return f64::NEG_INFINITY;
        }
        let (lo, hi) = (self.grid.lo(), self.grid.hi());
        if (above && t <= lo) || (!above && t >= hi) {
            return self.log_integral();
        }
        if (above && t >= hi) || (!above && t <= lo) {
            return f64::NEG_INFINITY;
        }
        let h = self.grid.step();
        let p = |i: usize| (self.values[i] - m).exp();
        let slope = |i: usize| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (p(b) - p(a)) / ((b - a) as f64 * h)
        };
        let at = |x: f64| self.eval(x).map_or(0.0, |v| (v - m).exp());
        let pos = self.grid.position(t);
        let s = if above {
            let j = (pos.ceil() as usize).min(n - 1);
            let tail: f64 = (j..n).map(|i| if i == j { 0.5 * h * p(i) } else { self.grid.weight(i) * p(i) }).sum();
            let xj = self.grid.point(j);
            let cell = (xj - t) / 6.0 * (at(t) + 4.0 * at(0.5 * (t + xj)) + p(j));
            tail + h * h / 12.0 * slope(j) + cell
        } else {
            let j = pos.floor().max(0.0) as usize;
            let tail: f64 = (0..=j).map(|i| if i == j { 0.5 * h * p(i) } else { self.grid.weight(i) * p(i) }).sum();
            let xj = self.grid.point(j);
            let cell = (t - xj) / 6.0 * (p(j) + 4.0 * at(0.5 * (t + xj)) + at(t));
            tail - h * h / 12.0 * slope(j) + cell
        };
        if s > 0.0 {
            m + s.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Central-difference derivative at grid points (one-sided at the ends).
    /// Non-finite neighbours give NaN.
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.values.len();
        let h = self.grid.step();
        (0..n)
            .map(|i| {
                let (a, b) = match i {
                    0 => (0, 1),
                    _ if i + 1 == n => (n - 2, n - 1),
                    _ => (i - 1, i + 1),
                };
                let d = (self.values[b] - self.values[a]) / ((b - a) as f64 * h);
                if d.is_finite() {
                    d
                } else {
                    f64::NAN
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_reaches_hi() {
        let g = GridSpec::covering(-1.0, 1.0, 0.1).unwrap();
        assert_eq!(g.count(), 21);
        assert!((g.hi() - 1.0).abs() < 1e-12);
        let g = GridSpec::covering(0.0, 1.05, 0.1).unwrap();
        assert!(g.hi() >= 1.05);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(0.0, 0.0, 10).is_err());
        assert!(GridSpec::new(0.0, 0.1, 1).is_err());
        assert!(GridSpec::new(f64::NAN, 0.1, 10).is_err());
    }

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let g = GridSpec::new(-2.0, 0.25, 17).unwrap();
        let f = LogGridFunction::from_fn(g, |x| 0.3 * x * x * x - x * x + 2.0).unwrap();
        for &x in &[-1.3, 0.01, 0.77, 1.49] {
            let exact = 0.3 * x * x * x - x * x + 2.0;
            assert!((f.eval(x).unwrap() - exact).abs() < 1e-12);
        }
        assert!(f.eval(2.5).is_none());
        assert!(f.eval_checked(-3.0, "test").is_err());
    }

    #[test]
    fn gaussian_moments_on_grid() {
        let g = GridSpec::covering(-12.0, 12.0, 0.05).unwrap();
        let f = LogGridFunction::from_fn(g, |x| -0.5 * (x - 1.0) * (x - 1.0) / 2.0).unwrap();
        let (m, v) = f.moments();
        assert!((m - 1.0).abs() < 1e-10);
        assert!((v - 2.0).abs() < 1e-10);
        let z = f.log_integral();
        assert!((z - (2.0 * std::f64::consts::PI * 2.0).sqrt().ln()).abs() < 1e-10);
    }

    #[test]
    fn cell_averaged_wall_is_second_order() {
        // Mass of a unit Gaussian on [0.123, inf) should be close to Φ(-0.123).
        let exact = 0.5 * libm::erfc(0.123 / std::f64::consts::SQRT_2);
        let mut errs = vec![];
        for &h in &[0.02, 0.01] {
            let g = GridSpec::covering(-10.0, 10.0, h).unwrap();
            let base = LogGridFunction::from_fn(g, |x| crate::special::log_phi(x)).unwrap();
            let wall = LogGridFunction::indicator_at_least(g, 0.123);
            let p = base.add(&wall).unwrap().log_integral().exp();
            errs.push((p - exact).abs());
        }
        assert!(errs[0] < 1e-4, "{errs:?}");
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    #[test]
    fn reflection_and_slice() {
        let g = GridSpec::new(-1.0, 0.5, 7).unwrap();
        let r = g.reflected();
        assert_eq!(r.lo(), -2.0);
        assert_eq!(r.hi(), 1.0);
        let s = g.slice(2, 4).unwrap();
        assert_eq!(s.lo(), 0.0);
        assert_eq!(s.count(), 3);
    }
}
