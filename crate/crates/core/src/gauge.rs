//! The Chern–Simons potentials generated by a field and the resulting
//! nonlinearity.
//!
//! With `ρ = |u|²`,
//!
//! ```text
//! A_θ(r) = -½ ∫_0^r ρ(s) s ds
//! A_0(r) = -∫_r^∞ (m + A_θ(s)) ρ(s) ds / s
//! ```
//!
//! `A_θ` is computed first and then fed into `A_0`.

use num_complex::Complex;

use crate::error::Result;
use crate::grid::{prefix_integral, tail_integral, RadialField, RadialGrid};
use crate::scalar::Real;

/// Sampled gauge potentials together with the charge that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugePair<T> {
    pub a_theta: Vec<T>,
    pub a_zero: Vec<T>,
    /// `2π Σ w_i ρ_i`, so that `a_theta[n-1] = -source_mass / 4π`.
    pub source_mass: T,
}

/// Gauge potentials of the field `u`.
pub fn compute_gauge<T: Real>(u: &RadialField<T>) -> Result<GaugePair<T>> {
    compute_gauge_from_density(&u.density(), u.m(), u.grid())
}

/// Gauge potentials of a density `ρ` for winding `m`.
pub fn compute_gauge_from_density<T: Real>(rho: &[T], m: i32, grid: &RadialGrid<T>) -> Result<GaugePair<T>> {
    let half = T::lit(0.5);
    let a_theta: Vec<T> = prefix_integral(rho, grid)?.into_iter().map(|p| -half * p).collect();
    let mm = T::lit(m as f64);
    let source: Vec<T> = a_theta.iter().zip(rho).map(|(&a, &p)| (mm + a) * p).collect();
    let a_zero = tail_integral(&source, grid)?.into_iter().map(|t| -t).collect();
    Ok(GaugePair { a_theta, a_zero, source_mass: grid.integrate_planar(rho) })
}

/// `A_θ(r_i) / r_i²`, with the origin value given by its limit:
/// `-ρ(0)/4` for `m = 0` and `0` otherwise.
pub fn a_theta_over_r2<T: Real>(gauge: &GaugePair<T>, rho0: T, m: i32, grid: &RadialGrid<T>) -> Vec<T> {
    let r = grid.nodes();
    let mut out: Vec<T> = (0..grid.n())
        .map(|i| if i == 0 { T::zero() } else { gauge.a_theta[i] / (r[i] * r[i]) })
        .collect();
    if m == 0 {
        out[0] = -rho0 / T::lit(4.0);
    }
    out
}

/// The real potential
/// `V = (2m/r²) A_θ + A_0 + A_θ²/r² - g ρ`, so that the equation reads
/// `i u_t + Δ_m u = V u`.
pub fn potential<T: Real>(rho: &[T], gauge: &GaugePair<T>, m: i32, g: T, grid: &RadialGrid<T>) -> Vec<T> {
    let over = a_theta_over_r2(gauge, rho[0], m, grid);
    let two_m = T::lit(2.0 * m as f64);
    (0..grid.n())
        .map(|i| (two_m + gauge.a_theta[i]) * over[i] + gauge.a_zero[i] - g * rho[i])
        .collect()
}

/// The full nonlinearity `Λ(u) = V[u] u`.
pub fn nonlinearity<T: Real>(u: &RadialField<T>) -> Result<Vec<Complex<T>>> {
    let rho = u.density();
    let gauge = compute_gauge_from_density(&rho, u.m(), u.grid())?;
    let v = potential(&rho, &gauge, u.m(), u.g(), u.grid());
    let out: Vec<Complex<T>> = u.values().iter().zip(&v).map(|(&x, &p)| x * p).collect();
    if let Some(index) = out.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(crate::error::CssError::NonFinite { index });
    }
    Ok(out)
}
