//! Uniform radial grids, the planar quadrature `∫ f r dr`, cumulative and
//! tail integrals, finite differences and parity-aware interpolation.

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex;

use crate::error::{CssError, Result};
use crate::scalar::Real;

/// Smallest admissible node count.
pub const MIN_NODES: usize = 16;

/// Uniform grid `r_i = i h` on `[0, r_max]`.
///
/// `quad_weights` is the trapezoid rule for `∫_0^{r_max} f(r) r dr`, that is
/// the trapezoid rule applied to the product `f(r) r`. It integrates every
/// piecewise-linear `f(r) r` exactly; in particular `Σ w_i = r_max² / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid<T> {
    n: usize,
    r_max: T,
    h: T,
    nodes: Vec<T>,
    quad_weights: Vec<T>,
}

/// Builds a uniform grid with `n` nodes on `[0, r_max]`.
pub fn make_uniform_grid<T: Real>(n: usize, r_max: T) -> Result<Arc<RadialGrid<T>>> {
    if n < MIN_NODES {
        return Err(CssError::GridTooSmall { n, min: MIN_NODES });
    }
    if !(r_max > T::zero()) || !r_max.is_finite() {
        return Err(CssError::InvalidExtent(r_max.as_f64()));
    }
    let h = r_max / T::lit((n - 1) as f64);
    let mut nodes: Vec<T> = (0..n).map(|i| T::lit(i as f64) * h).collect();
    nodes[n - 1] = r_max;
    let mut quad_weights: Vec<T> = nodes.iter().map(|&r| h * r).collect();
    quad_weights[n - 1] = h * r_max / T::lit(2.0);
    Ok(Arc::new(RadialGrid { n, r_max, h, nodes, quad_weights }))
}

impl<T: Real> RadialGrid<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_max(&self) -> T {
        self.r_max
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn quad_weights(&self) -> &[T] {
        &self.quad_weights
    }

    /// Finite-volume weights: identical to the trapezoid weights except at
    /// the origin, where the cell `[0, h/2]` contributes `h² / 8`.
    ///
    /// The Crank–Nicolson step is unitary in the norm built from these.
    pub fn cell_weights(&self) -> Vec<T> {
        let mut w = self.quad_weights.clone();
        w[0] = self.h * self.h / T::lit(8.0);
        w
    }

    /// `Σ w_i f_i ≈ ∫_0^{r_max} f(r) r dr`.
    pub fn integrate(&self, f: &[T]) -> T {
        self.quad_weights.iter().zip(f).map(|(&w, &v)| w * v).sum()
    }

    /// `2π Σ w_i f_i`, the planar integral of a radial function.
    pub fn integrate_planar(&self, f: &[T]) -> T {
        T::TAU() * self.integrate(f)
    }

    /// Staggered midpoint radius `r_{i+1/2}`.
    #[inline]
    pub fn mid(&self, i: usize) -> T {
        (T::lit(i as f64) + T::lit(0.5)) * self.h
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(CssError::LengthMismatch { expected: self.n, found: len });
        }
        Ok(())
    }
}

/// Cumulative trapezoid `out[i] ≈ ∫_0^{r_i} f(s) s ds`, with `out[0] = 0`.
pub fn prefix_integral<T: Real>(f: &[T], grid: &RadialGrid<T>) -> Result<Vec<T>> {
    grid.check_len(f.len())?;
    let half = grid.h / T::lit(2.0);
    let mut out = vec![T::zero(); grid.n];
    for i in 1..grid.n {
        out[i] = out[i - 1] + half * (f[i - 1] * grid.nodes[i - 1] + f[i] * grid.nodes[i]);
    }
    Ok(out)
}

/// Trapezoid tail `out[i] ≈ ∫_{r_i}^{r_max} f(s) / s ds`, with `out[n-1] = 0`.
///
/// The input is `f` itself; the division by `s` happens here. At `s = 0`
/// the integrand `f(s)/s` is linearly extrapolated from the first two
/// interior nodes. This keeps the operator linear, and it returns exactly 0
/// for sources vanishing like `s²` (every gauge source does). Sums are
/// accumulated from the outer boundary inward.
pub fn tail_integral<T: Real>(f: &[T], grid: &RadialGrid<T>) -> Result<Vec<T>> {
    grid.check_len(f.len())?;
    if let Some(index) = f.iter().position(|v| !v.is_finite()) {
        return Err(CssError::NonFinite { index });
    }
    let n = grid.n;
    let mut g: Vec<T> = (0..n)
        .map(|i| if i == 0 { T::zero() } else { f[i] / grid.nodes[i] })
        .collect();
    g[0] = T::lit(2.0) * g[1] - g[2];
    let half = grid.h / T::lit(2.0);
    let mut out = vec![T::zero(); n];
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] + half * (g[i] + g[i + 1]);
    }
    Ok(out)
}

fn differentiate<T, V>(v: &[V], h: T) -> Vec<V>
where
    T: Real,
    V: Copy + Add<Output = V> + Sub<Output = V> + Mul<T, Output = V>,
{
    let n = v.len();
    let inv2h = T::one() / (T::lit(2.0) * h);
    let mut d = Vec::with_capacity(n);
    d.push((v[1] * T::lit(4.0) - v[0] * T::lit(3.0) - v[2]) * inv2h);
    for i in 1..n - 1 {
        d.push((v[i + 1] - v[i - 1]) * inv2h);
    }
    d.push((v[n - 1] * T::lit(3.0) - v[n - 2] * T::lit(4.0) + v[n - 3]) * inv2h);
    d
}

/// Second-order `∂_r`: central differences inside, one-sided three-point
/// stencils at both ends.
pub fn radial_derivative<T: Real>(u: &[Complex<T>], grid: &RadialGrid<T>) -> Result<Vec<Complex<T>>> {
    grid.check_len(u.len())?;
    Ok(differentiate(u, grid.h))
}

/// Real-valued counterpart of [`radial_derivative`].
pub fn radial_derivative_real<T: Real>(u: &[T], grid: &RadialGrid<T>) -> Result<Vec<T>> {
    grid.check_len(u.len())?;
    Ok(differentiate(u, grid.h))
}

/// Samples of an `m`-equivariant profile `u(r)` on a grid, with the
/// coupling `g` of the equation it is meant to evolve under.
///
/// Invariants checked on construction: one value per node, all finite,
/// `u(r_max) = 0`, and `u(0) = 0` whenever `m ≠ 0`.
#[derive(Debug, Clone)]
pub struct RadialField<T> {
    grid: Arc<RadialGrid<T>>,
    m: i32,
    g: T,
    values: Vec<Complex<T>>,
}

impl<T: Real> RadialField<T> {
    pub fn new(grid: Arc<RadialGrid<T>>, m: i32, g: T, values: Vec<Complex<T>>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(index) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(CssError::NonFinite { index });
        }
        if values[grid.n - 1] != Complex::new(T::zero(), T::zero()) {
            return Err(CssError::Boundary("u(r_max) must vanish".into()));
        }
        if m != 0 && values[0] != Complex::new(T::zero(), T::zero()) {
            return Err(CssError::Boundary(format!("u(0) must vanish for m = {m}")));
        }
        Ok(RadialField { grid, m, g, values })
    }

    /// Samples `f` at the nodes, forcing the boundary values demanded by
    /// the invariants.
    pub fn from_fn(grid: Arc<RadialGrid<T>>, m: i32, g: T, f: impl Fn(T) -> Complex<T>) -> Result<Self> {
        let n = grid.n;
        let mut values: Vec<Complex<T>> = grid.nodes.iter().map(|&r| f(r)).collect();
        values[n - 1] = Complex::new(T::zero(), T::zero());
        if m != 0 {
            values[0] = Complex::new(T::zero(), T::zero());
        }
        Self::new(grid, m, g, values)
    }

    /// Real samples promoted to complex values.
    pub fn from_real(grid: Arc<RadialGrid<T>>, m: i32, g: T, values: &[T]) -> Result<Self> {
        let values = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        Self::new(grid, m, g, values)
    }

    /// The all-zero field.
    pub fn zeros(grid: Arc<RadialGrid<T>>, m: i32, g: T) -> Self {
        let values = vec![Complex::new(T::zero(), T::zero()); grid.n];
        RadialField { grid, m, g, values }
    }

    /// Same grid, `m` and `g`, new samples.
    pub fn with_values(&self, values: Vec<Complex<T>>) -> Result<Self> {
        Self::new(self.grid.clone(), self.m, self.g, values)
    }

    /// Same samples, different coupling.
    pub fn with_coupling(&self, g: T) -> Self {
        RadialField { grid: self.grid.clone(), m: self.m, g, values: self.values.clone() }
    }

    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        &self.grid
    }

    pub fn m(&self) -> i32 {
        self.m
    }

    pub fn g(&self) -> T {
        self.g
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }

    /// `|u_i|²`.
    pub fn density(&self) -> Vec<T> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Real parts of the samples.
    pub fn real_part(&self) -> Vec<T> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Multiplies every sample by `e^{iγ}`.
    pub fn rotate_phase(&self, gamma: T) -> Self {
        let p = Complex::from_polar(T::one(), gamma);
        RadialField {
            grid: self.grid.clone(),
            m: self.m,
            g: self.g,
            values: self.values.iter().map(|&v| v * p).collect(),
        }
    }

    /// Errors unless both fields share a grid.
    pub fn same_grid(&self, other: &RadialField<T>) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(CssError::GridMismatch)
        }
    }
}

/// Natural cubic spline of an `m`-equivariant profile.
///
/// The samples are mirrored to `[-r_max, r_max]` with parity `(-1)^m`, which
/// makes the interpolant smooth through the origin, and the profile is zero
/// beyond `r_max`.
#[derive(Debug, Clone)]
pub struct ProfileSpline<T> {
    h: T,
    r_max: T,
    values: Vec<Complex<T>>,
    second: Vec<Complex<T>>,
}

impl<T: Real> ProfileSpline<T> {
    pub fn new(values: &[Complex<T>], m: i32, grid: &RadialGrid<T>) -> Result<Self> {
        grid.check_len(values.len())?;
        let n = grid.n;
        let sign = if m.rem_euclid(2) == 0 { T::one() } else { -T::one() };
        let len = 2 * n - 1;
        let ext: Vec<Complex<T>> = (0..len)
            .map(|k| if k < n - 1 { values[n - 1 - k] * sign } else { values[k - (n - 1)] })
            .collect();
        // Natural end conditions; interior rows M_{k-1} + 4 M_k + M_{k+1} = 6 Δ²y / h².
        let zero = Complex::new(T::zero(), T::zero());
        let mut second = vec![zero; len];
        let inner = len - 2;
        let scale = T::lit(6.0) / (grid.h * grid.h);
        let rhs: Vec<Complex<T>> = (1..len - 1)
            .map(|k| (ext[k + 1] - ext[k] * T::lit(2.0) + ext[k - 1]) * scale)
            .collect();
        let mut c = vec![T::zero(); inner];
        let mut d = vec![zero; inner];
        let four = T::lit(4.0);
        c[0] = T::one() / four;
        d[0] = rhs[0] / four;
        for k in 1..inner {
            let denom = four - c[k - 1];
            c[k] = T::one() / denom;
            d[k] = (rhs[k] - d[k - 1]) / denom;
        }
        second[inner] = d[inner - 1];
        for k in (0..inner - 1).rev() {
            second[k + 1] = d[k] - second[k + 2] * c[k];
        }
        Ok(ProfileSpline { h: grid.h, r_max: grid.r_max, values: ext, second })
    }

    fn locate(&self, r: T) -> Option<(usize, T)> {
        let x = r + self.r_max;
        if x < T::zero() || r > self.r_max {
            return None;
        }
        let last = self.values.len() - 2;
        let k = (x / self.h).floor().to_usize().unwrap_or(0).min(last);
        Some((k, x / self.h - T::lit(k as f64)))
    }

    /// Interpolated value at radius `r`.
    pub fn eval(&self, r: T) -> Complex<T> {
        let Some((k, t)) = self.locate(r) else {
            return Complex::new(T::zero(), T::zero());
        };
        let s = T::one() - t;
        let h2 = self.h * self.h / T::lit(6.0);
        self.values[k] * s
            + self.values[k + 1] * t
            + (self.second[k] * (s * s * s - s) + self.second[k + 1] * (t * t * t - t)) * h2
    }

    /// Derivative of the interpolant at radius `r`.
    pub fn eval_derivative(&self, r: T) -> Complex<T> {
        let Some((k, t)) = self.locate(r) else {
            return Complex::new(T::zero(), T::zero());
        };
        let s = T::one() - t;
        let three = T::lit(3.0);
        let h6 = self.h / T::lit(6.0);
        (self.values[k + 1] - self.values[k]) / self.h
            + (self.second[k + 1] * (three * t * t - T::one()) - self.second[k] * (three * s * s - T::one())) * h6
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, r_max: f64) -> Arc<RadialGrid<f64>> {
        make_uniform_grid(n, r_max).unwrap()
    }

    #[test]
    fn rejects_small_or_empty_grids() {
        assert!(matches!(make_uniform_grid::<f64>(8, 1.0), Err(CssError::GridTooSmall { n: 8, .. })));
        assert!(matches!(make_uniform_grid::<f64>(32, 0.0), Err(CssError::InvalidExtent(_))));
        assert!(make_uniform_grid::<f64>(32, f64::NAN).is_err());
    }

    #[test]
    fn weights_integrate_r_exactly() {
        let g = grid(101, 10.0);
        let ones = vec![1.0; 101];
        assert_eq!(g.integrate(&ones), 50.0);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.nodes()[100], 10.0);
        assert!(g.quad_weights().iter().all(|&w| w >= 0.0));
        assert!(g.nodes().windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn weights_exact_on_piecewise_linear_times_r() {
        // f(r) r = min(r, 2) is linear on every cell because 2 is a node.
        let g = grid(61, 6.0);
        let f: Vec<f64> = g.nodes().iter().map(|&r| if r == 0.0 { 1.0 } else { r.min(2.0) / r }).collect();
        assert!((g.integrate(&f) - 10.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_moment() {
        // ∫ e^{-r²} r dr = 1/2. The trapezoid rule on g(r) = r e^{-r²} is off
        // by (h²/12)(g'(r_max) - g'(0)) = -h²/12 to leading order.
        let g = grid(4097, 20.0);
        let f: Vec<f64> = g.nodes().iter().map(|&r| (-r * r).exp()).collect();
        let h = g.h();
        let err = g.integrate(&f) - 0.5;
        assert!((err + h * h / 12.0).abs() < 1e-10, "{err}");
        assert!(err.abs() < 2.1e-6);
    }

    #[test]
    fn prefix_examples() {
        let g = grid(201, 4.0);
        assert!(prefix_integral(&vec![0.0; 201], &g).unwrap().iter().all(|&v| v == 0.0));
        let p = prefix_integral(&vec![1.0; 201], &g).unwrap();
        for (i, &r) in g.nodes().iter().enumerate() {
            assert!((p[i] - r * r / 2.0).abs() < 1e-13);
        }
        let q2: Vec<f64> = g.nodes().iter().map(|&s| 8.0 / (1.0 + s * s).powi(2)).collect();
        let p = prefix_integral(&q2, &g).unwrap();
        assert!((p[50] - 2.0).abs() < 1e-3);
        assert!(matches!(prefix_integral(&[1.0; 3], &g), Err(CssError::LengthMismatch { .. })));
    }

    #[test]
    fn tail_examples() {
        let g = grid(201, 2.0);
        let f: Vec<f64> = g.nodes().iter().map(|&s| s * s).collect();
        let t = tail_integral(&f, &g).unwrap();
        assert!((t[100] - 1.5).abs() < 1e-12);
        assert_eq!(t[200], 0.0);

        let g = grid(16001, 40.0);
        let f: Vec<f64> = g.nodes().iter().map(|&s| -16.0 * s * s / (1.0 + s * s).powi(3)).collect();
        let t = tail_integral(&f, &g).unwrap();
        assert!((t[0] + 4.0).abs() < 1e-4, "{}", t[0]);

        let mut bad = vec![0.0; 16001];
        bad[7] = f64::INFINITY;
        assert!(matches!(tail_integral(&bad, &g), Err(CssError::NonFinite { index: 7 })));
    }

    #[test]
    fn tail_extrapolates_at_origin() {
        // f(s) = s + s², so f/s = 1 + s is linear and extrapolation is exact.
        let g = grid(101, 1.0);
        let f: Vec<f64> = g.nodes().iter().map(|&s| s + s * s).collect();
        let t = tail_integral(&f, &g).unwrap();
        assert!((t[0] - 1.5).abs() < 1e-12);
        // f(s) = s², so f/s = s and the origin value is exactly 0.
        let f: Vec<f64> = g.nodes().iter().map(|&s| s * s).collect();
        let t = tail_integral(&f, &g).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let g = grid(401, 4.0);
        let c: Vec<Complex<f64>> = vec![Complex::new(2.0, -1.0); 401];
        assert!(radial_derivative(&c, &g).unwrap().iter().all(|d| d.norm() < 1e-12));
        let q: Vec<Complex<f64>> = g.nodes().iter().map(|&r| Complex::new(r * r, 0.0)).collect();
        let d = radial_derivative(&q, &g).unwrap();
        for (i, &r) in g.nodes().iter().enumerate() {
            assert!((d[i].re - 2.0 * r).abs() < 1e-10);
        }
    }

    fn sin_error(n: usize) -> f64 {
        let g = grid(n, 20.0);
        let s: Vec<f64> = g.nodes().iter().map(|r| r.sin()).collect();
        let d = radial_derivative_real(&s, &g).unwrap();
        d.iter().zip(g.nodes()).map(|(d, r)| (d - r.cos()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn derivative_converges_at_second_order() {
        let e1 = sin_error(1025);
        let e2 = sin_error(2049);
        let e3 = sin_error(4097);
        assert!((e1 / e2 - 4.0).abs() < 0.8 && (e2 / e3 - 4.0).abs() < 0.8);
        // Leading error of the one-sided end stencil is h²/3.
        let h = 20.0 / 4096.0;
        assert!(e3 < 0.4 * h * h);
    }

    fn integral_errors(n: usize) -> (f64, f64) {
        let g = grid(n, 12.0);
        let f: Vec<f64> = g.nodes().iter().map(|&s| (-s * s).exp() * (1.0 + s)).collect();
        let p = prefix_integral(&f, &g).unwrap();
        // ∫_0^1 e^{-s²}(1+s) s ds = (1 - e^{-1})/2 + ∫_0^1 s² e^{-s²} ds
        let i1 = (1.0 - (-1.0_f64).exp()) / 2.0 + 0.189_472_345_820_492_3;
        let k = (n - 1) / 12;
        let t = tail_integral(&f, &g).unwrap();
        // ∫_1^∞ e^{-s²}(1+s)/s ds = E1(1)/2 + √π erfc(1)/2
        let t1 = 0.219_383_934_395_520_3 / 2.0 + 0.139_402_865_767_654_3;
        ((p[k] - i1).abs(), (t[k] - t1).abs())
    }

    #[test]
    fn integrals_converge_at_second_order() {
        let (p1, t1) = integral_errors(1201);
        let (p2, t2) = integral_errors(2401);
        assert!((p1 / p2 - 4.0).abs() < 0.8, "prefix ratio {}", p1 / p2);
        assert!((t1 / t2 - 4.0).abs() < 0.8, "tail ratio {}", t1 / t2);
    }

    #[test]
    fn spline_reproduces_samples_and_parity() {
        let g = grid(201, 10.0);
        for m in 0..3 {
            let vals: Vec<Complex<f64>> = g
                .nodes()
                .iter()
                .map(|&r| Complex::new(r.powi(m) * (-r * r / 4.0).exp(), 0.5 * r.powi(m) * (-r * r).exp()))
                .collect();
            let s = ProfileSpline::new(&vals, m, &g).unwrap();
            for (i, &r) in g.nodes().iter().enumerate() {
                assert!((s.eval(r) - vals[i]).norm() < 1e-13);
            }
            let x: f64 = 1.234_567;
            let exact = x.powi(m) * (-x * x / 4.0).exp();
            assert!((s.eval(x).re - exact).abs() < 1e-5);
            let dexact = (m as f64 * x.powi(m - 1) - x.powi(m + 1) / 2.0) * (-x * x / 4.0).exp();
            assert!((s.eval_derivative(x).re - dexact).abs() < 1e-4);
            assert_eq!(s.eval(10.5), Complex::new(0.0, 0.0));
        }
    }

    #[test]
    fn field_invariants_enforced() {
        let g = grid(32, 3.0);
        let mut vals = vec![Complex::new(1.0, 0.0); 32];
        assert!(matches!(RadialField::new(g.clone(), 0, 1.0, vals.clone()), Err(CssError::Boundary(_))));
        vals[31] = Complex::new(0.0, 0.0);
        assert!(RadialField::new(g.clone(), 0, 1.0, vals.clone()).is_ok());
        assert!(matches!(RadialField::new(g.clone(), 1, 1.0, vals.clone()), Err(CssError::Boundary(_))));
        vals[3] = Complex::new(f64::NAN, 0.0);
        assert!(matches!(RadialField::new(g.clone(), 0, 1.0, vals), Err(CssError::NonFinite { index: 3 })));
        let f = RadialField::from_fn(g, 2, 1.0, |r| Complex::new(1.0 + r, 0.0)).unwrap();
        assert_eq!(f.values()[0], Complex::new(0.0, 0.0));
    }

    #[test]
    fn works_in_single_precision() {
        let g = make_uniform_grid::<f32>(101, 10.0).unwrap();
        assert!((g.integrate(&[1.0; 101]) - 50.0).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn integrals_are_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, k in 0.1..2.0f64, c in 0.1..2.0f64) {
            let g = grid(64, 5.0);
            let f: Vec<f64> = g.nodes().iter().map(|&r| (-k * r).exp()).collect();
            let h: Vec<f64> = g.nodes().iter().map(|&r| (c * r).sin()).collect();
            let mix: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
            for op in [prefix_integral::<f64>, tail_integral::<f64>] {
                let (pf, ph, pm) = (op(&f, &g).unwrap(), op(&h, &g).unwrap(), op(&mix, &g).unwrap());
                for i in 0..64 {
                    prop_assert!((pm[i] - a * pf[i] - b * ph[i]).abs() < 1e-11);
                }
            }
        }

        #[test]
        fn prefix_monotone_and_matches_quadrature(vals in proptest::collection::vec(0.0..10.0f64, 40)) {
            let g = grid(40, 7.0);
            let p = prefix_integral(&vals, &g).unwrap();
            prop_assert!(p.windows(2).all(|w| w[1] >= w[0]));
            let total = g.integrate(&vals);
            prop_assert!((p[39] - total).abs() <= 1e-13 * total.max(1e-300));
        }
    }
}
