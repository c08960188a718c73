//! Mass, energy in two forms, the L⁴ norm, virial quantities and a truncated
//! Morawetz functional. Every integral carries the angular factor 2π.
//!
//! `energy` is built on the same stencils as the time stepper (a staggered
//! kinetic term and trapezoid sums for the potential part), so its gradient
//! is exactly the discrete right-hand side of the evolution equation and the
//! semi-discrete flow conserves it. `energy_selfdual_form` uses nodal central
//! differences instead; the two agree to second order in `h`.

use num_complex::Complex;

use crate::error::{CssError, Result};
use crate::gauge::{compute_gauge_from_density, GaugePair};
use crate::grid::{radial_derivative, RadialField, RadialGrid};
use crate::scalar::Real;

/// Threshold on the fraction of `∫|x|²|u|²` beyond `0.9 r_max` above which
/// the virial quantities are flagged as unreliable.
pub const VIRIAL_BOUNDARY_THRESHOLD: f64 = 1e-8;

/// Snapshot of the monitored functionals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConservedReport<T> {
    pub mass: T,
    pub energy: T,
    pub energy_selfdual_form: T,
    pub l4_fourth_power: T,
    pub virial_v: T,
    pub virial_dv: T,
}

/// `∫|u|²`.
pub fn mass<T: Real>(u: &RadialField<T>) -> T {
    u.grid().integrate_planar(&u.density())
}

/// `∫|u|⁴`.
pub fn l4_fourth_power<T: Real>(u: &RadialField<T>) -> T {
    let q: Vec<T> = u.values().iter().map(|v| v.norm_sqr() * v.norm_sqr()).collect();
    u.grid().integrate_planar(&q)
}

/// `½∫|∂_r u|²` on the staggered stencil.
pub fn kinetic_energy<T: Real>(u: &RadialField<T>) -> T {
    let grid = u.grid();
    let v = u.values();
    let h = grid.h();
    let s: T = (0..grid.n() - 1).map(|i| grid.mid(i) * (v[i + 1] - v[i]).norm_sqr()).sum();
    T::PI() * s / h
}

fn magnetic_factor<T: Real>(gauge: &GaugePair<T>, m: i32, grid: &RadialGrid<T>) -> Vec<T> {
    let mm = T::lit(m as f64);
    let r = grid.nodes();
    (0..grid.n()).map(|i| if i == 0 { T::zero() } else { (mm + gauge.a_theta[i]) / r[i] }).collect()
}

/// `½∫|∂_r u|² + ½∫((m + A_θ)/r)²|u|² - (g/4)∫|u|⁴`.
pub fn energy<T: Real>(u: &RadialField<T>) -> Result<T> {
    let rho = u.density();
    let grid = u.grid();
    let gauge = compute_gauge_from_density(&rho, u.m(), grid)?;
    let b = magnetic_factor(&gauge, u.m(), grid);
    let pot: Vec<T> = (0..grid.n()).map(|i| T::lit(0.5) * b[i] * b[i] * rho[i] - u.g() / T::lit(4.0) * rho[i] * rho[i]).collect();
    let e = kinetic_energy(u) + grid.integrate_planar(&pot);
    if !e.is_finite() {
        return Err(CssError::NonFinite { index: 0 });
    }
    Ok(e)
}

/// Pointwise `∂_r u - ((m + A_θ)/r) u`, with the origin value
/// `(1 - m) ∂_r u(0)` from the small-`r` behaviour `u ~ r^{|m|}`.
pub fn bogomolny_residual<T: Real>(u: &RadialField<T>) -> Result<Vec<Complex<T>>> {
    let rho = u.density();
    let grid = u.grid();
    let gauge = compute_gauge_from_density(&rho, u.m(), grid)?;
    let b = magnetic_factor(&gauge, u.m(), grid);
    let du = radial_derivative(u.values(), grid)?;
    let mut out: Vec<Complex<T>> = (0..grid.n()).map(|i| du[i] - u.values()[i] * b[i]).collect();
    out[0] = du[0] * T::lit(1.0 - u.m() as f64);
    Ok(out)
}

/// `½∫|∂_r u - ((m + A_θ)/r) u|² + ((1 - g)/4)∫|u|⁴`.
pub fn energy_selfdual_form<T: Real>(u: &RadialField<T>) -> Result<T> {
    let d = bogomolny_residual(u)?;
    let rho = u.density();
    let f: Vec<T> = (0..u.grid().n())
        .map(|i| T::lit(0.5) * d[i].norm_sqr() + (T::one() - u.g()) / T::lit(4.0) * rho[i] * rho[i])
        .collect();
    let e = u.grid().integrate_planar(&f);
    if !e.is_finite() {
        return Err(CssError::NonFinite { index: 0 });
    }
    Ok(e)
}

/// Virial quantities of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Virial<T> {
    /// `¼∫|x|²|u|²`.
    pub v: T,
    /// `∫Im(ū r ∂_r u)`, the exact time derivative of `v` under the
    /// discrete linear flow.
    pub dv: T,
    /// Share of `∫|x|²|u|²` carried by `r > 0.9 r_max`.
    pub boundary_fraction: T,
}

fn staggered_momentum<T: Real>(u: &RadialField<T>, weight: impl Fn(T) -> T) -> T {
    let v = u.values();
    let grid = u.grid();
    let s: T = (0..grid.n() - 1).map(|i| weight(grid.mid(i)) * (v[i].conj() * v[i + 1]).im).sum();
    T::TAU() * s
}

/// `(¼∫|x|²|u|², ∫Im(ū r∂_r u))`, warning when the outer tenth of the grid
/// holds more than [`VIRIAL_BOUNDARY_THRESHOLD`] of the second moment.
pub fn virial_pair<T: Real>(u: &RadialField<T>) -> Virial<T> {
    let grid = u.grid();
    let r = grid.nodes();
    let second: Vec<T> = u.density().iter().zip(r).map(|(&p, &x)| p * x * x).collect();
    let total = grid.integrate(&second);
    let cut = T::lit(0.9) * grid.r_max();
    let outer: T = (0..grid.n()).filter(|&i| r[i] > cut).map(|i| grid.quad_weights()[i] * second[i]).sum();
    let boundary_fraction = if total > T::zero() { outer / total } else { T::zero() };
    if boundary_fraction > T::lit(VIRIAL_BOUNDARY_THRESHOLD) {
        log::warn!(
            "virial moment has {:.3e} of its weight beyond 0.9 r_max; enlarge the grid",
            boundary_fraction.as_f64()
        );
    }
    Virial {
        v: T::TAU() * total / T::lit(4.0),
        dv: staggered_momentum(u, |x| x * x),
        boundary_fraction,
    }
}

/// Morawetz weight: `x` on `[0, 1]`, `3/2` beyond 2, and on `[1, 2]` the
/// polynomial `1 + s - s³ + s⁴/2` in `s = x - 1`, which matches value, slope
/// and curvature at both ends.
pub fn morawetz_weight<T: Real>(x: T) -> T {
    if x <= T::one() {
        x
    } else if x >= T::lit(2.0) {
        T::lit(1.5)
    } else {
        let s = x - T::one();
        T::one() + s - s * s * s + s * s * s * s / T::lit(2.0)
    }
}

/// Derivative of [`morawetz_weight`]; on `[1, 2]` it equals `(1-s)²(1+2s)`.
pub fn morawetz_weight_derivative<T: Real>(x: T) -> T {
    if x <= T::one() {
        T::one()
    } else if x >= T::lit(2.0) {
        T::zero()
    } else {
        let s = x - T::one();
        (T::one() - s) * (T::one() - s) * (T::one() + T::lit(2.0) * s)
    }
}

/// `R ∫ ψ(r/R) Im(ū ∂_r u) dx` for `R ∈ (0, r_max/2]`.
pub fn morawetz<T: Real>(u: &RadialField<T>, radius: T) -> Result<T> {
    let r_max = u.grid().r_max();
    if !(radius > T::zero() && radius <= r_max / T::lit(2.0)) {
        return Err(CssError::InvalidParameters(format!(
            "Morawetz radius {} outside (0, {}]",
            radius,
            r_max / T::lit(2.0)
        )));
    }
    Ok(staggered_momentum(u, |x| radius * morawetz_weight(x / radius) * x))
}

/// All monitored functionals of `u`.
pub fn conserved_report<T: Real>(u: &RadialField<T>) -> Result<ConservedReport<T>> {
    let vir = virial_pair(u);
    Ok(ConservedReport {
        mass: mass(u),
        energy: energy(u)?,
        energy_selfdual_form: energy_selfdual_form(u)?,
        l4_fourth_power: l4_fourth_power(u),
        virial_v: vir.v,
        virial_dv: vir.dv,
    })
}
