//! Standing waves `e^{iαt} Q(r)` of the equivariant equation:
//!
//! ```text
//! Δ_m Q - (2m/r²) A_θ[Q] Q - A_0[Q] Q - (A_θ[Q]²/r²) Q + g Q³ - α Q = 0
//! ```
//!
//! For `g = 1, α = 0` the explicit profile `√8 (m+1) r^m / (1 + r^{2m+2})`
//! is available; for `g > 1, α > 0` a damped Newton method with the exact
//! Jacobian of the discrete nonlocal operator is used.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{CssError, Result};
use crate::functionals::mass;
use crate::gauge::{compute_gauge_from_density, potential};
use crate::grid::{make_uniform_grid, ProfileSpline, RadialField, RadialGrid};
use crate::perturb::uniform_vector;
use crate::scalar::Real;
use crate::stencil::Laplacian;

/// A real, positive standing-wave profile and how well it solves its equation.
#[derive(Debug, Clone)]
pub struct SolitonProfile<T> {
    pub field: RadialField<T>,
    pub m: i32,
    pub g: T,
    pub alpha: T,
    pub charge: T,
    /// Discrete L² norm of the standing-wave residual.
    pub residual_norm: T,
    /// Tolerance the solver was asked to meet; `None` for closed forms.
    pub tolerance: Option<T>,
    /// Residual norm before every Newton update, ending with the accepted one.
    pub newton_history: Vec<T>,
}

impl<T: Real> SolitonProfile<T> {
    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        self.field.grid()
    }

    /// Wraps a stored profile, recomputing its charge and residual.
    pub fn from_field(field: RadialField<T>, alpha: T) -> Result<Self> {
        if field.values().iter().any(|z| z.im != T::zero()) {
            return Err(CssError::InvalidParameters("a soliton profile must be real".into()));
        }
        finish(field, alpha, None, Vec::new())
    }

    /// Real samples `Q(r_i)`.
    pub fn samples(&self) -> Vec<T> {
        self.field.real_part()
    }

    /// Root-mean-square radius `(∫r²Q² / ∫Q²)^{1/2}`.
    pub fn scale(&self) -> T {
        let grid = self.grid();
        let rho = self.field.density();
        let second: Vec<T> = rho.iter().zip(grid.nodes()).map(|(&p, &r)| p * r * r).collect();
        (grid.integrate(&second) / grid.integrate(&rho)).sqrt()
    }
}

/// `√8 (m+1) r^m / (1 + r^{2m+2})`.
pub fn selfdual_value<T: Real>(m: i32, r: T) -> T {
    let mp1 = T::lit(m as f64 + 1.0);
    T::lit(8.0).sqrt() * mp1 * r.powi(m) / (T::one() + r.powi(2 * m + 2))
}

/// The explicit self-dual soliton sampled on `grid`.
pub fn selfdual_soliton<T: Real>(m: i32, grid: Arc<RadialGrid<T>>) -> Result<SolitonProfile<T>> {
    if m < 0 {
        return Err(CssError::InvalidParameters(format!("self-dual soliton needs m ≥ 0, got {m}")));
    }
    let field = RadialField::from_fn(grid, m, T::one(), |r| Complex::new(selfdual_value(m, r), T::zero()))?;
    finish(field, T::zero(), None, Vec::new())
}

fn finish<T: Real>(field: RadialField<T>, alpha: T, tolerance: Option<T>, newton_history: Vec<T>) -> Result<SolitonProfile<T>> {
    let res = standing_wave_residual(&field, alpha)?;
    Ok(SolitonProfile {
        m: field.m(),
        g: field.g(),
        alpha,
        charge: mass(&field),
        residual_norm: residual_norm(&res, field.grid()),
        tolerance,
        newton_history,
        field,
    })
}

/// Samples of `Δ_m q - V[q] q - α q` with the coupling carried by `q`.
///
/// Boundary rows follow the discrete Laplacian: the value at `r_max` is 0,
/// as is the origin value for `m ≠ 0`; for `m = 0` the origin row uses the
/// even ghost node.
pub fn standing_wave_residual<T: Real>(q: &RadialField<T>, alpha: T) -> Result<Vec<Complex<T>>> {
    let grid = q.grid();
    let rho = q.density();
    let gauge = compute_gauge_from_density(&rho, q.m(), grid)?;
    let v = potential(&rho, &gauge, q.m(), q.g(), grid);
    let lap = Laplacian::new(q.m(), grid);
    let mut out = lap.apply(q.values());
    let zero = Complex::new(T::zero(), T::zero());
    for i in 0..grid.n() {
        if i < lap.first() || i == grid.n() - 1 {
            out[i] = zero;
        } else {
            out[i] -= q.values()[i] * (v[i] + alpha);
        }
    }
    Ok(out)
}

/// `(2π Σ w̃_i |F_i|²)^{1/2}` with the finite-volume weights.
pub fn residual_norm<T: Real>(f: &[Complex<T>], grid: &RadialGrid<T>) -> T {
    let w = grid.cell_weights();
    let s: T = f.iter().zip(&w).map(|(z, &wi)| wi * z.norm_sqr()).sum();
    (T::TAU() * s).sqrt()
}

/// Knobs for [`solve_standing_wave`].
#[derive(Debug, Clone)]
pub struct SolverOptions<T> {
    /// Increments of the homotopy used when no direct Newton run converges.
    pub continuation_steps: usize,
    /// Step halvings allowed per homotopy increment.
    pub max_halvings: usize,
    /// Target for the residual norm.
    pub tol: T,
    /// Newton iterations per attempt.
    pub max_newton: usize,
    /// Grids larger than this are first solved on a coarser grid.
    pub coarse_nodes: usize,
    /// Compare the analytic Jacobian with finite differences before use.
    pub check_jacobian: bool,
    /// Seed for the Jacobian check directions.
    pub seed: u64,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            continuation_steps: 32,
            max_halvings: 4,
            tol: T::lit(1e-9),
            max_newton: 40,
            coarse_nodes: 257,
            check_jacobian: true,
            seed: 0x5eed,
        }
    }
}

/// Discrete problem on a fixed grid with real unknowns `u_first..u_{n-2}`.
struct Problem<T: Real> {
    grid: Arc<RadialGrid<T>>,
    lap: Laplacian<T>,
    m: i32,
    g: T,
    alpha: T,
    cell: Vec<T>,
}

impl<T: Real> Problem<T> {
    fn new(grid: Arc<RadialGrid<T>>, m: i32, g: T, alpha: T) -> Self {
        let lap = Laplacian::new(m, &grid);
        let cell = grid.cell_weights();
        Problem { grid, lap, m, g, alpha, cell }
    }

    fn first(&self) -> usize {
        self.lap.first()
    }

    fn unknowns(&self) -> usize {
        self.lap.active()
    }

    fn embed(&self, x: &[T]) -> Vec<T> {
        let mut u = vec![T::zero(); self.grid.n()];
        u[self.first()..self.first() + x.len()].copy_from_slice(x);
        u
    }

    fn restrict(&self, u: &[T]) -> Vec<T> {
        u[self.first()..self.grid.n() - 1].to_vec()
    }

    fn residual(&self, x: &[T]) -> Result<Vec<T>> {
        let u = self.embed(x);
        let rho: Vec<T> = u.iter().map(|&v| v * v).collect();
        let gauge = compute_gauge_from_density(&rho, self.m, &self.grid)?;
        let v = potential(&rho, &gauge, self.m, self.g, &self.grid);
        let lu = self.lap.apply(&u);
        let f: Vec<T> = (self.first()..self.grid.n() - 1).map(|i| lu[i] - (v[i] + self.alpha) * u[i]).collect();
        Ok(f)
    }

    fn norm(&self, f: &[T]) -> T {
        let s: T = f.iter().enumerate().map(|(k, &v)| self.cell[k + self.first()] * v * v).sum();
        (T::TAU() * s).sqrt()
    }

    /// Exact Jacobian of [`Problem::residual`], assembled in O(n²).
    fn jacobian(&self, x: &[T]) -> Result<DMatrix<T>> {
        let grid = &self.grid;
        let n = grid.n();
        let h = grid.h();
        let r = grid.nodes();
        let u = self.embed(x);
        let rho: Vec<T> = u.iter().map(|&v| v * v).collect();
        let gauge = compute_gauge_from_density(&rho, self.m, grid)?;
        let a = &gauge.a_theta;
        let v = potential(&rho, &gauge, self.m, self.g, grid);
        let mm = T::lit(self.m as f64);
        let two = T::lit(2.0);
        let half = T::lit(0.5);

        let c: Vec<T> = (0..n).map(|j| if j == 0 { T::zero() } else { rho[j] / r[j] }).collect();
        let tau_out = |j: usize| if j == n - 1 { half * h } else { h };
        let mut tail_c = vec![T::zero(); n];
        for k in (0..n - 1).rev() {
            tail_c[k] = tail_c[k + 1] + tau_out(k + 1) * c[k + 1];
        }
        // Derivative of the A_0 source through the explicit (m + A_θ)ρ/r factor.
        let direct: Vec<T> = (0..n)
            .map(|k| if k == 0 { T::zero() } else { two * (mm + a[k]) * u[k] / r[k] })
            .collect();

        let first = self.first();
        let size = self.unknowns();
        let mut jac = DMatrix::<T>::zeros(size, size);
        for i in first..n - 1 {
            let row = i - first;
            let coef_a = if i == 0 { T::zero() } else { two * (mm + a[i]) / (r[i] * r[i]) };
            let s_diag_i = half * h * c[i] + tail_c[i];
            for k in first..n - 1 {
                let col = k - first;
                // ∂A_θ(r_i)/∂u_k = -K_ik u_k.
                let k_ik = if k < i {
                    h * r[k]
                } else if k == i {
                    half * h * r[i]
                } else {
                    T::zero()
                };
                let tau_ik = if k == i {
                    half * h
                } else if k > i {
                    tau_out(k)
                } else {
                    T::zero()
                };
                let s_ik = if k < i {
                    h * r[k] * s_diag_i
                } else if k == i {
                    half * h * c[i] * half * h * r[i] + h * r[i] * tail_c[i]
                } else {
                    h * r[k] * (half * h * c[k] + tail_c[k])
                };
                let mut d_a0 = -tau_ik * direct[k] + u[k] * s_ik;
                if i == 0 {
                    // The origin integrand is extrapolated as 2 g_1 - g_2.
                    let dg = |j: usize| {
                        let kjk = if k < j {
                            h * r[k]
                        } else if k == j {
                            half * h * r[j]
                        } else {
                            T::zero()
                        };
                        let own = if k == j { direct[j] } else { T::zero() };
                        own - c[j] * kjk * u[k]
                    };
                    d_a0 -= half * h * (two * dg(1) - dg(2));
                }
                let mut d_v = coef_a * (-k_ik * u[k]) + d_a0;
                if k == i {
                    d_v -= two * self.g * u[i];
                }
                jac[(row, col)] = -u[i] * d_v;
            }
            let (lo, di, up) = self.lap.row(i);
            jac[(row, row)] += di - (v[i] + self.alpha);
            if i > first {
                jac[(row, row - 1)] += lo;
            }
            if i + 1 < n - 1 {
                jac[(row, row + 1)] += up;
            }
        }
        Ok(jac)
    }

    /// Worst relative disagreement between `J d` and central differences
    /// over `count` random directions.
    fn jacobian_check(&self, x: &[T], jac: &DMatrix<T>, count: usize, seed: u64) -> Result<T> {
        let size = x.len();
        let scale = x.iter().fold(T::zero(), |a, &b| a.max(b.abs())).max(T::lit(1e-3));
        let mut worst = T::zero();
        for k in 0..count {
            let d: Vec<T> = uniform_vector(size, seed.wrapping_add(k as u64));
            let eps = T::lit(1e-5) * scale;
            let plus: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + eps * b).collect();
            let minus: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a - eps * b).collect();
            let (fp, fm) = (self.residual(&plus)?, self.residual(&minus)?);
            let fd: Vec<T> = fp.iter().zip(&fm).map(|(&p, &q)| (p - q) / (T::lit(2.0) * eps)).collect();
            let jd = jac * DVector::from_vec(d);
            let num: T = fd.iter().zip(jd.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let den: T = fd.iter().map(|&a| a * a).sum();
            worst = worst.max((num / den.max(T::min_positive_value())).sqrt());
        }
        Ok(worst)
    }
}

enum Attempt<T> {
    Converged(Vec<T>, Vec<T>),
    Stagnated(T),
    Diverged(T),
}

/// Damped Newton on `F(x) - shift = 0`.
fn newton<T: Real>(
    prob: &Problem<T>,
    mut x: Vec<T>,
    shift: Option<&[T]>,
    opts: &SolverOptions<T>,
    check: &mut bool,
) -> Result<Attempt<T>> {
    let eval = |x: &[T]| -> Result<Vec<T>> {
        let mut f = prob.residual(x)?;
        if let Some(s) = shift {
            f.iter_mut().zip(s).for_each(|(a, &b)| *a -= b);
        }
        Ok(f)
    };
    let mut f = eval(&x)?;
    let mut nr = prob.norm(&f);
    let mut history = vec![nr];
    for _ in 0..opts.max_newton {
        if !nr.is_finite() {
            return Ok(Attempt::Diverged(nr));
        }
        if nr < opts.tol {
            return Ok(Attempt::Converged(x, history));
        }
        let jac = prob.jacobian(&x)?;
        if *check {
            let err = prob.jacobian_check(&x, &jac, 10, opts.seed)?;
            log::debug!("Jacobian check: worst relative error {:.3e}", err.as_f64());
            if !(err < T::lit(1e-6)) {
                return Err(CssError::JacobianMismatch(err.as_f64()));
            }
            *check = false;
        }
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|&v| -v));
        let Some(step) = T::lu_solve(jac, rhs) else {
            return Ok(Attempt::Diverged(nr));
        };
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..14 {
            let trial: Vec<T> = x.iter().zip(step.iter()).map(|(&a, &b)| a + t * b).collect();
            let ft = eval(&trial)?;
            let nt = prob.norm(&ft);
            if nt.is_finite() && nt < (T::one() - T::lit(1e-4) * t) * nr {
                x = trial;
                f = ft;
                nr = nt;
                accepted = true;
                break;
            }
            t = t / T::lit(2.0);
        }
        history.push(nr);
        if !accepted {
            return Ok(Attempt::Stagnated(nr));
        }
    }
    if nr < opts.tol {
        Ok(Attempt::Converged(x, history))
    } else {
        Ok(Attempt::Diverged(nr))
    }
}

/// Sign check: returns the profile made nonnegative, or the radius of the
/// first sign change.
fn positive_branch<T: Real>(prob: &Problem<T>, mut x: Vec<T>) -> std::result::Result<Vec<T>, T> {
    let peak = x.iter().fold(T::zero(), |a, &b| if b.abs() > a.abs() { b } else { a });
    if peak < T::zero() {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let floor = T::lit(1e-10) * peak.abs();
    if let Some(k) = x.iter().position(|&v| v < -floor) {
        return Err(prob.grid.nodes()[k + prob.first()]);
    }
    Ok(x)
}

fn seed_candidates<T: Real>(prob: &Problem<T>, count: usize) -> Result<Vec<Vec<T>>> {
    let r = prob.grid.nodes();
    let base = T::one() / prob.alpha.max(T::lit(1e-6)).sqrt();
    let mut scored: Vec<(T, Vec<T>)> = Vec::new();
    for is in 0..40 {
        let s = base * T::lit(0.3 * 20f64.powf(is as f64 / 39.0));
        for ia in 0..30 {
            let amp = T::lit(0.2 * 15f64.powf(ia as f64 / 29.0));
            let u: Vec<T> = (0..prob.grid.n())
                .map(|i| if i == prob.grid.n() - 1 { T::zero() } else { amp * selfdual_value(prob.m, r[i] / s) / s })
                .collect();
            let x = prob.restrict(&u);
            let f = prob.residual(&x)?;
            let score = prob.norm(&f) / prob.norm(&x).max(T::min_positive_value());
            if score.is_finite() {
                scored.push((score, x));
            }
        }
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored.into_iter().take(count).map(|(_, x)| x).collect())
}

fn homotopy<T: Real>(prob: &Problem<T>, seed: Vec<T>, opts: &SolverOptions<T>, check: &mut bool) -> Result<Attempt<T>> {
    let f0 = prob.residual(&seed)?;
    let mut x = seed;
    let mut t = T::zero();
    let base = T::one() / T::lit(opts.continuation_steps.max(1) as f64);
    let mut history = Vec::new();
    while t < T::one() {
        let mut dt = base.min(T::one() - t);
        let mut halvings = 0;
        loop {
            let tn = if t + dt > T::one() - T::lit(1e-12) { T::one() } else { t + dt };
            let shift: Vec<T> = f0.iter().map(|&v| (T::one() - tn) * v).collect();
            match newton(prob, x.clone(), Some(&shift), opts, check)? {
                Attempt::Converged(xn, h) => {
                    x = xn;
                    t = tn;
                    history.extend(h);
                    break;
                }
                other if halvings >= opts.max_halvings => return Ok(other),
                _ => {
                    dt = dt / T::lit(2.0);
                    halvings += 1;
                }
            }
        }
    }
    Ok(Attempt::Converged(x, history))
}

fn solve_on_grid<T: Real>(prob: &Problem<T>, opts: &SolverOptions<T>, check: &mut bool) -> Result<(Vec<T>, Vec<T>)> {
    let candidates = seed_candidates(prob, 6)?;
    let mut last_err = CssError::NewtonDiverged { residual: f64::INFINITY };
    let tiny = T::lit(1e-6);
    let try_one = |attempt: Attempt<T>, last_err: &mut CssError| -> Option<(Vec<T>, Vec<T>)> {
        match attempt {
            Attempt::Converged(x, hist) => {
                if prob.norm(&x) < tiny {
                    return None;
                }
                match positive_branch(prob, x) {
                    Ok(x) => Some((x, hist)),
                    Err(r) => {
                        *last_err = CssError::OffBranch { r: r.as_f64() };
                        None
                    }
                }
            }
            Attempt::Stagnated(res) => {
                if !matches!(last_err, CssError::OffBranch { .. }) {
                    *last_err = CssError::GridTooCoarse { residual: res.as_f64() };
                }
                None
            }
            Attempt::Diverged(res) => {
                if matches!(last_err, CssError::NewtonDiverged { .. }) {
                    *last_err = CssError::NewtonDiverged { residual: res.as_f64() };
                }
                None
            }
        }
    };
    for x0 in &candidates {
        let att = newton(prob, x0.clone(), None, opts, check)?;
        if let Some(found) = try_one(att, &mut last_err) {
            return Ok(found);
        }
    }
    if let Some(x0) = candidates.into_iter().next() {
        let att = homotopy(prob, x0, opts, check)?;
        if let Some(found) = try_one(att, &mut last_err) {
            return Ok(found);
        }
    }
    Err(last_err)
}

/// Solves the standing-wave equation at `(m, g, α)` on `grid`.
///
/// Large grids are first solved on a coarser grid with the same extent and
/// the result is interpolated and polished. On each grid, damped Newton
/// runs are started from self-dual profiles whose amplitude and scale are
/// fitted to minimise the relative residual; if none converges, a Newton
/// homotopy `F(u) - (1-t) F(u_seed)` is followed from `t = 0` to `t = 1`.
/// Profiles that change sign are rejected.
pub fn solve_standing_wave<T: Real>(
    m: i32,
    g: T,
    alpha: T,
    grid: Arc<RadialGrid<T>>,
    opts: &SolverOptions<T>,
) -> Result<SolitonProfile<T>> {
    if m < 0 {
        return Err(CssError::InvalidParameters(format!("standing waves need m ≥ 0, got {m}")));
    }
    if !(g >= T::one()) || !(alpha >= T::zero()) {
        return Err(CssError::InvalidParameters(format!("need g ≥ 1 and α ≥ 0, got g = {g}, α = {alpha}")));
    }
    let near = T::lit(1e-9);
    if g - T::one() < near && alpha < near {
        let seed = selfdual_soliton(m, grid)?;
        let field = seed.field.with_coupling(g);
        return finish(field, alpha, Some(opts.tol), Vec::new());
    }
    if g - T::one() < near || alpha < near {
        return Err(CssError::InvalidParameters(format!(
            "g = 1 requires α = 0 and g > 1 requires α > 0 (got g = {g}, α = {alpha})"
        )));
    }

    let prob = Problem::new(grid.clone(), m, g, alpha);
    let mut check = opts.check_jacobian;
    let n = grid.n();
    let mut found = None;
    if n > 2 * opts.coarse_nodes {
        let coarse_n = ((n - 1) / 4 + 1).max(opts.coarse_nodes);
        let coarse_grid = make_uniform_grid(coarse_n, grid.r_max())?;
        if let Ok(coarse) = solve_standing_wave(m, g, alpha, coarse_grid.clone(), opts) {
            let spline = ProfileSpline::new(coarse.field.values(), m, &coarse_grid)?;
            let u: Vec<T> = grid.nodes().iter().map(|&r| spline.eval(r).re).collect();
            let x0 = prob.restrict(&u);
            if let Attempt::Converged(x, hist) = newton(&prob, x0, None, opts, &mut check)? {
                if let Ok(x) = positive_branch(&prob, x) {
                    found = Some((x, hist));
                }
            }
        }
    }
    let (x, history) = match found {
        Some(f) => f,
        None => solve_on_grid(&prob, opts, &mut check)?,
    };
    let u = prob.embed(&x);
    let field = RadialField::from_real(grid, m, g, &u)?;
    let profile = finish(field, alpha, Some(opts.tol), history)?;
    log::info!(
        "soliton m={m} g={g} α={alpha}: charge {:.12}, residual {:.3e}, {} Newton steps",
        profile.charge.as_f64(),
        profile.residual_norm.as_f64(),
        profile.newton_history.len().saturating_sub(1)
    );
    Ok(profile)
}

/// Charge `c_{m,g}` of the ground state: `8π(m+1)` for `g = 1`, otherwise
/// the charge of the computed soliton at `α = 1`.
pub fn threshold_charge<T: Real>(m: i32, g: T, grid: Arc<RadialGrid<T>>, opts: &SolverOptions<T>) -> Result<T> {
    if g == T::one() {
        return Ok(T::lit(8.0) * T::PI() * T::lit(m as f64 + 1.0));
    }
    Ok(solve_standing_wave(m, g, T::one(), grid, opts)?.charge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{bogomolny_residual, energy};
    use std::f64::consts::PI;

    fn grid(n: usize, r_max: f64) -> Arc<RadialGrid<f64>> {
        make_uniform_grid(n, r_max).unwrap()
    }

    #[test]
    fn selfdual_values_and_charge() {
        let q = selfdual_soliton(0, grid(401, 40.0)).unwrap();
        assert!((q.samples()[10] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(q.alpha, 0.0);
        assert_eq!(q.g, 1.0);
        assert!(selfdual_soliton(-1, grid(64, 4.0)).is_err());
        let q2 = selfdual_soliton(2, grid(40001, 4000.0)).unwrap();
        assert!(((q2.charge - 24.0 * PI) / (24.0 * PI)).abs() < 1e-6);
    }

    #[test]
    fn selfdual_residual_converges() {
        // Measured away from the outer boundary, where truncating the
        // algebraic tail to zero dominates.
        let interior = |n: usize| {
            let q = selfdual_soliton(1, grid(n, 20.0)).unwrap();
            let f = standing_wave_residual(&q.field, 0.0).unwrap();
            let cut = (n - 1) / 2;
            residual_norm(&f[..cut], q.grid())
        };
        let (a, b, c) = (interior(513), interior(1025), interior(2049));
        assert!(a / b > 3.5 && b / c > 3.5, "{a} {b} {c}");
    }

    #[test]
    fn zero_field_has_zero_residual() {
        let u = RadialField::zeros(grid(64, 5.0), 1, 1.5);
        assert!(standing_wave_residual(&u, 1.0).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for m in 0..3 {
            let prob = Problem::new(grid(120, 12.0), m, 1.7, 0.8);
            let u: Vec<f64> = prob.grid.nodes().iter().map(|&r| 1.3 * r.powi(m) * (-r * r / 3.0).exp()).collect();
            let x = prob.restrict(&u);
            let jac = prob.jacobian(&x).unwrap();
            let err = prob.jacobian_check(&x, &jac, 10, 3).unwrap();
            assert!(err < 1e-7, "m={m}: {err}");
        }
    }

    #[test]
    fn near_selfdual_target_returns_seed() {
        let g = grid(1024, 40.0);
        let p = solve_standing_wave(1, 1.0 + 1e-12, 1e-12, g, &SolverOptions::default()).unwrap();
        assert!(((p.charge - 16.0 * PI) / (16.0 * PI)).abs() < 1e-6);
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        let g = grid(64, 10.0);
        let o = SolverOptions::default();
        assert!(matches!(solve_standing_wave(1, 1.0, 1.0, g.clone(), &o), Err(CssError::InvalidParameters(_))));
        assert!(matches!(solve_standing_wave(1, 1.5, 0.0, g.clone(), &o), Err(CssError::InvalidParameters(_))));
        assert!(matches!(solve_standing_wave(-1, 1.5, 1.0, g, &o), Err(CssError::InvalidParameters(_))));
    }

    #[test]
    fn solves_non_selfdual_profile() {
        let p = solve_standing_wave(1, 1.5, 1.0, grid(1024, 30.0), &SolverOptions::default()).unwrap();
        assert!(p.residual_norm < 1e-9);
        let q = p.samples();
        assert!(q.iter().all(|&v| v >= 0.0));
        // Local behaviour r^m near the origin.
        let r = p.grid().nodes();
        let slope = (q[10] / q[1]).ln() / (r[10] / r[1]).ln();
        assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
        // Quadratic convergence over the last steps above round-off.
        let h = &p.newton_history;
        assert!(*h.last().unwrap() < 1e-9, "{h:?}");
        // Estimated order over the last three iterates above the round-off floor.
        let k = h.iter().rposition(|&v| v > 1e-10).unwrap();
        assert!(k >= 2, "{h:?}");
        let order = (h[k] / h[k - 1]).ln() / (h[k - 1] / h[k - 2]).ln();
        assert!(order > 1.5, "order {order}: {h:?}");
        // The energy vanishes up to discretisation error.
        assert!(energy(&p.field).unwrap().abs() < 0.05 * p.charge);
        let _ = bogomolny_residual(&p.field).unwrap();
    }

    #[test]
    fn threshold_of_selfdual_is_exact() {
        let t = threshold_charge(2, 1.0, grid(64, 10.0), &SolverOptions::default()).unwrap();
        assert_eq!(t, 24.0 * PI);
    }

    #[test]
    fn single_precision_selfdual() {
        let g = make_uniform_grid::<f32>(2001, 200.0).unwrap();
        let q = selfdual_soliton(1, g).unwrap();
        assert!(((q.charge - 16.0 * std::f32::consts::PI) / (16.0 * std::f32::consts::PI)).abs() < 1e-4);
    }
}
