//! Seeded random directions.
//!
//! All randomness comes from ChaCha8 seeded with a 64-bit integer, so any
//! other ChaCha8 implementation reproduces the same streams.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::RadialGrid;
use crate::scalar::Real;

/// The generator used everywhere a random stream is needed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[-1, 1]`.
pub fn uniform_vector<T: Real>(len: usize, seed: u64) -> Vec<T> {
    let mut r = rng(seed);
    (0..len).map(|_| T::lit(r.random_range(-1.0..=1.0))).collect()
}

/// A smooth real profile `Σ c_k r^m exp(-(r - a_k)² / b_k²)` with random
/// coefficients, centres in `[0, extent]` and widths in `[0.5, 2] · extent / 3`,
/// vanishing at `r_max` and, for `m ≠ 0`, at the origin.
pub fn smooth_direction<T: Real>(grid: &RadialGrid<T>, m: i32, extent: T, seed: u64) -> Vec<T> {
    let mut r = rng(seed);
    let ext = extent.as_f64();
    let bumps: Vec<(f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                r.random_range(-1.0..=1.0),
                r.random_range(0.0..=ext),
                r.random_range(0.5..=2.0) * ext / 3.0,
            )
        })
        .collect();
    let n = grid.n();
    let mut out: Vec<T> = grid
        .nodes()
        .iter()
        .map(|&x| {
            let x = x.as_f64();
            let s: f64 = bumps.iter().map(|&(c, a, b)| c * (-(x - a).powi(2) / (b * b)).exp()).sum();
            T::lit(s * x.powi(m.unsigned_abs() as i32))
        })
        .collect();
    out[n - 1] = T::zero();
    if m != 0 {
        out[0] = T::zero();
    }
    out
}

/// Complex version of [`smooth_direction`] with independent real and
/// imaginary parts.
pub fn smooth_complex_direction<T: Real>(grid: &RadialGrid<T>, m: i32, extent: T, seed: u64) -> Vec<Complex<T>> {
    let re = smooth_direction(grid, m, extent, seed);
    let im = smooth_direction(grid, m, extent, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    re.into_iter().zip(im).map(|(a, b)| Complex::new(a, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<f64> = uniform_vector(10, 42);
        let b: Vec<f64> = uniform_vector(10, 42);
        let c: Vec<f64> = uniform_vector(10, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let g = make_uniform_grid(100, 10.0).unwrap();
        let d: Vec<f64> = smooth_direction(&g, 1, 4.0, 7);
        assert_eq!(d, smooth_direction(&g, 1, 4.0, 7));
        assert_eq!(d[0], 0.0);
        assert_eq!(d[99], 0.0);
    }
}
