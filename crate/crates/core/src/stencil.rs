//! The conservative equivariant Laplacian
//! `(1/r_i)(r_{i+1/2} δ₊ - r_{i-1/2} δ₋)/h² - m²/r_i²`.
//!
//! Rows are active for `first ≤ i ≤ n-2`: the outer node is a Dirichlet zero,
//! and so is the origin when `m ≠ 0`. For `m = 0` the origin row comes from
//! an even ghost node, `4 (u_1 - u_0) / h²`. The operator is self-adjoint in
//! the inner product weighted by [`RadialGrid::cell_weights`].

use std::ops::{Add, Mul};

use crate::grid::RadialGrid;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Laplacian<T> {
    first: usize,
    n: usize,
    lower: Vec<T>,
    diag: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> Laplacian<T> {
    pub fn new(m: i32, grid: &RadialGrid<T>) -> Self {
        let n = grid.n();
        let h2 = grid.h() * grid.h();
        let r = grid.nodes();
        let mm = T::lit((m as f64) * (m as f64));
        let mut lower = vec![T::zero(); n];
        let mut diag = vec![T::zero(); n];
        let mut upper = vec![T::zero(); n];
        for i in 1..n - 1 {
            lower[i] = grid.mid(i - 1) / (h2 * r[i]);
            upper[i] = grid.mid(i) / (h2 * r[i]);
            diag[i] = -T::lit(2.0) / h2 - mm / (r[i] * r[i]);
        }
        let first = if m == 0 {
            diag[0] = -T::lit(4.0) / h2;
            upper[0] = T::lit(4.0) / h2;
            0
        } else {
            1
        };
        Laplacian { first, n, lower, diag, upper }
    }

    /// Index of the first active row.
    pub fn first(&self) -> usize {
        self.first
    }

    /// Number of active rows.
    pub fn active(&self) -> usize {
        self.n - 1 - self.first
    }

    /// `(sub, diag, super)` coefficients of row `i`.
    pub fn row(&self, i: usize) -> (T, T, T) {
        (self.lower[i], self.diag[i], self.upper[i])
    }

    /// Applies the operator; inactive rows are returned as zero.
    pub fn apply<V>(&self, v: &[V]) -> Vec<V>
    where
        V: Copy + Add<Output = V> + Mul<T, Output = V>,
    {
        let zero = v[0] * T::zero();
        let mut out = vec![zero; self.n];
        for i in self.first..self.n - 1 {
            let mut acc = v[i] * self.diag[i] + v[i + 1] * self.upper[i];
            if i > 0 {
                acc = acc + v[i - 1] * self.lower[i];
            }
            out[i] = acc;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;

    #[test]
    fn matches_continuum_laplacian() {
        // Δ_m (r^m e^{-r²}) = (4r² - 4(m+1)) r^m e^{-r²}.
        let grid = make_uniform_grid::<f64>(2001, 8.0).unwrap();
        for m in 0..3 {
            let lap = Laplacian::new(m, &grid);
            let f: Vec<f64> = grid.nodes().iter().map(|&r| r.powi(m) * (-r * r).exp()).collect();
            let out = lap.apply(&f);
            for i in (50..1990).step_by(37) {
                let r = grid.nodes()[i];
                let exact = (4.0 * r * r - 4.0 * (m as f64 + 1.0)) * r.powi(m) * (-r * r).exp();
                assert!((out[i] - exact).abs() < 1e-4, "m={m} r={r}");
            }
        }
    }

    #[test]
    fn self_adjoint_in_cell_weights() {
        let grid = make_uniform_grid(64, 5.0).unwrap();
        let w = grid.cell_weights();
        for m in 0..3 {
            let lap = Laplacian::new(m, &grid);
            let mut a: Vec<f64> = (0..64).map(|i| ((i * 7 % 11) as f64).sin()).collect();
            let mut b: Vec<f64> = (0..64).map(|i| ((i * 3 % 5) as f64 + 0.5).cos()).collect();
            a[63] = 0.0;
            b[63] = 0.0;
            if m != 0 {
                a[0] = 0.0;
                b[0] = 0.0;
            }
            let (la, lb) = (lap.apply(&a), lap.apply(&b));
            let lhs: f64 = (0..64).map(|i| w[i] * la[i] * b[i]).sum();
            let rhs: f64 = (0..64).map(|i| w[i] * a[i] * lb[i]).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "m={m}");
        }
    }
}
