//! Split-step integration of `i u_t + Δ_m u = V[u] u` and the exact
//! symmetries used to manufacture reference solutions.
//!
//! A step is Strang splitting: a half step of the pointwise phase rotation
//! `u ← e^{-i V dt/2} u` (exact, since `V` only depends on `|u|²`), a
//! Crank–Nicolson step of the linear equation with the conservative
//! Laplacian, and another half phase step with `V` recomputed. The
//! Crank–Nicolson matrix is factored once per step size.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{CssError, Result};
use crate::functionals::{conserved_report, ConservedReport};
use crate::gauge::{compute_gauge_from_density, potential};
use crate::grid::{ProfileSpline, RadialField, RadialGrid};
use crate::linops::{FitMode, ModulationFrame, Modulator};
use crate::scalar::Real;
use crate::soliton::SolitonProfile;
use crate::stencil::Laplacian;

/// Time-stepping parameters. `dt` may be negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionConfig<T> {
    pub dt: T,
    pub t_start: T,
    pub t_end: T,
    /// Record every this many steps (the final state is always recorded).
    pub sample_every: usize,
    /// Allowed relative change of the weighted norm in the linear substep.
    pub linear_solver_tol: T,
}

impl<T: Real> Default for EvolutionConfig<T> {
    fn default() -> Self {
        EvolutionConfig {
            dt: T::lit(1e-4),
            t_start: T::zero(),
            t_end: T::one(),
            sample_every: 100,
            linear_solver_tol: T::lit(1e-12),
        }
    }
}

impl<T: Real> EvolutionConfig<T> {
    /// Number of steps from `t_start` to `t_end`.
    pub fn steps(&self) -> Result<usize> {
        let span = (self.t_end - self.t_start) / self.dt;
        if self.dt == T::zero() || !span.is_finite() || span < -T::lit(1e-9) {
            return Err(CssError::InvalidParameters(format!(
                "dt = {} does not lead from {} to {}",
                self.dt, self.t_start, self.t_end
            )));
        }
        if self.sample_every == 0 {
            return Err(CssError::InvalidParameters("sample_every must be ≥ 1".into()));
        }
        Ok(span.round().to_usize().unwrap_or(0))
    }
}

/// Precomputed split-step propagator for one grid, winding, coupling and
/// step size.
#[derive(Debug, Clone)]
pub struct Evolver<T> {
    grid: Arc<RadialGrid<T>>,
    m: i32,
    g: T,
    dt: T,
    tol: T,
    lap: Laplacian<T>,
    /// Thomas-eliminated super-diagonal of `I - i dt/2 L`.
    upper: Vec<Complex<T>>,
    /// Reciprocal pivots of the same elimination.
    pivot: Vec<Complex<T>>,
    cell: Vec<T>,
}

impl<T: Real> Evolver<T> {
    pub fn new(grid: Arc<RadialGrid<T>>, m: i32, g: T, dt: T, linear_solver_tol: T) -> Result<Self> {
        if !(dt.is_finite() && dt != T::zero()) {
            return Err(CssError::InvalidParameters(format!("invalid time step {dt}")));
        }
        let lap = Laplacian::new(m, &grid);
        let h = grid.h();
        if dt.abs() > h {
            log::warn!("|dt| = {:e} exceeds h = {:e}; the scheme is stable but inaccurate", dt.as_f64(), h.as_f64());
        }
        let spectral = T::lit(4.0) / (h * h) + T::lit((m * m) as f64) / (h * h);
        log::debug!("dt·ρ(Δ) ≈ {:e}", (dt.abs() * spectral).as_f64());
        let n = grid.n();
        let first = lap.first();
        let half = Complex::new(T::zero(), -dt / T::lit(2.0));
        let one = Complex::new(T::one(), T::zero());
        let zero = Complex::new(T::zero(), T::zero());
        let mut upper = vec![zero; n];
        let mut pivot = vec![zero; n];
        for i in first..n - 1 {
            let (lo, di, up) = lap.row(i);
            let a = half * lo;
            let b = one + half * di;
            let c = half * up;
            let denom = if i == first { b } else { b - a * upper[i - 1] };
            if denom.norm() == T::zero() || !denom.re.is_finite() {
                return Err(CssError::LinearSolveFailed(format!("zero pivot at row {i}")));
            }
            pivot[i] = one / denom;
            upper[i] = c * pivot[i];
        }
        let cell = grid.cell_weights();
        Ok(Evolver { grid, m, g, dt, tol: linear_solver_tol, lap, upper, pivot, cell })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    fn weighted_norm(&self, v: &[Complex<T>]) -> T {
        v.iter().zip(&self.cell).map(|(z, &w)| w * z.norm_sqr()).sum()
    }

    fn phase(&self, v: &mut [Complex<T>], tau: T) -> Result<()> {
        let rho: Vec<T> = v.iter().map(|z| z.norm_sqr()).collect();
        let gauge = compute_gauge_from_density(&rho, self.m, &self.grid)?;
        let pot = potential(&rho, &gauge, self.m, self.g, &self.grid);
        for (z, &p) in v.iter_mut().zip(&pot) {
            *z *= Complex::from_polar(T::one(), -p * tau);
        }
        Ok(())
    }

    fn linear(&self, v: &mut [Complex<T>]) -> Result<()> {
        let n = v.len();
        let first = self.lap.first();
        let before = self.weighted_norm(v);
        let applied = self.lap.apply(v);
        let half = Complex::new(T::zero(), self.dt / T::lit(2.0));
        let minus = Complex::new(T::zero(), -self.dt / T::lit(2.0));
        let mut rhs: Vec<Complex<T>> = (0..n).map(|i| v[i] + half * applied[i]).collect();
        for i in first..n - 1 {
            let (lo, _, _) = self.lap.row(i);
            let prev = if i == first { Complex::new(T::zero(), T::zero()) } else { rhs[i - 1] };
            rhs[i] = (rhs[i] - minus * lo * prev) * self.pivot[i];
        }
        for i in (first..n - 2).rev() {
            let next = rhs[i + 1];
            rhs[i] = rhs[i] - self.upper[i] * next;
        }
        let zero = Complex::new(T::zero(), T::zero());
        rhs[n - 1] = zero;
        if first == 1 {
            rhs[0] = zero;
        }
        v.copy_from_slice(&rhs);
        let after = self.weighted_norm(v);
        if !after.is_finite() {
            let index = v.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())).unwrap_or(0);
            return Err(CssError::NonFinite { index });
        }
        if (after - before).abs() > self.tol * before.max(T::min_positive_value()) {
            return Err(CssError::LinearSolveFailed(format!(
                "weighted norm moved by {:e} relative in the linear substep",
                ((after - before) / before).as_f64()
            )));
        }
        Ok(())
    }

    /// One Strang step.
    pub fn step(&self, u: &RadialField<T>) -> Result<RadialField<T>> {
        if u.grid().n() != self.grid.n() || u.grid().r_max() != self.grid.r_max() || u.m() != self.m {
            return Err(CssError::GridMismatch);
        }
        let mut v = u.values().to_vec();
        let tau = self.dt / T::lit(2.0);
        self.phase(&mut v, tau)?;
        self.linear(&mut v)?;
        self.phase(&mut v, tau)?;
        if let Some(index) = v.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(CssError::NonFinite { index });
        }
        u.with_values(v)
    }
}

/// One split step of `u` with the step size of `cfg`.
pub fn step<T: Real>(u: &RadialField<T>, cfg: &EvolutionConfig<T>) -> Result<RadialField<T>> {
    Evolver::new(u.grid().clone(), u.m(), u.g(), cfg.dt, cfg.linear_solver_tol)?.step(u)
}

/// What to fit against while evolving.
#[derive(Debug, Clone, Copy)]
pub struct Tracking<'a, T> {
    pub modulator: &'a Modulator<T>,
    pub mode: FitMode,
    /// Needed for [`FitMode::Orthogonal`].
    pub psi: Option<&'a [T]>,
    /// Blowup time `T`: the chirp `e^{-ir²/(4(T-t))}` is removed from each
    /// snapshot before fitting.
    pub chirp_time: Option<T>,
    /// Stop once the fitted scale drops below this value.
    pub min_lambda: Option<T>,
}

/// Why a trajectory ended before `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// The fitted scale fell below the resolution floor.
    Resolution { t: f64, lambda: f64 },
    /// A step or a fit failed; the last recorded state is healthy.
    Failure { t: f64, message: String },
}

/// Sampled states with their diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<RadialField<T>>,
    pub reports: Vec<ConservedReport<T>>,
    pub modulation: Option<Vec<ModulationFrame<T>>>,
    pub stopped: Option<StopReason>,
}

/// `u · e^{i r²/(4(T - t))}`.
pub fn remove_chirp<T: Real>(u: &RadialField<T>, blowup_time: T, t: T) -> Result<RadialField<T>> {
    let k = T::one() / (T::lit(4.0) * (blowup_time - t));
    let vals = u
        .values()
        .iter()
        .zip(u.grid().nodes())
        .map(|(&z, &r)| z * Complex::from_polar(T::one(), k * r * r))
        .collect();
    u.with_values(vals)
}

fn fit_sample<T: Real>(
    track: &Tracking<'_, T>,
    u: &RadialField<T>,
    t: T,
    previous: Option<&ModulationFrame<T>>,
) -> Result<ModulationFrame<T>> {
    let target = match track.chirp_time {
        Some(tb) => remove_chirp(u, tb, t)?,
        None => u.clone(),
    };
    let seed = previous.map(|f| {
        let (_, gamma) = track.modulator.seed_with_scale(&target, f.lambda);
        (f.lambda, gamma)
    });
    track.modulator.fit(&target, track.mode, track.psi, seed)
}

/// Integrates from `u0` at `cfg.t_start` to `cfg.t_end`.
///
/// Failures truncate the trajectory and are recorded in
/// [`Trajectory::stopped`]; only invalid configurations are returned as
/// errors.
pub fn evolve<T: Real>(u0: &RadialField<T>, cfg: &EvolutionConfig<T>, tracking: Option<Tracking<'_, T>>) -> Result<Trajectory<T>> {
    let steps = cfg.steps()?;
    let evolver = Evolver::new(u0.grid().clone(), u0.m(), u0.g(), cfg.dt, cfg.linear_solver_tol)?;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        reports: Vec::new(),
        modulation: tracking.as_ref().map(|_| Vec::new()),
        stopped: None,
    };
    let mut u = u0.clone();
    let mut k = 0usize;
    loop {
        let t = cfg.t_start + T::lit(k as f64) * cfg.dt;
        if k % cfg.sample_every == 0 || k == steps {
            let report = match conserved_report(&u) {
                Ok(r) => r,
                Err(e) => {
                    traj.stopped = Some(StopReason::Failure { t: t.as_f64(), message: e.to_string() });
                    break;
                }
            };
            if let Some(track) = &tracking {
                let frames = traj.modulation.as_mut().expect("tracking allocates frames");
                match fit_sample(track, &u, t, frames.last()) {
                    Ok(frame) => {
                        let lambda = frame.lambda;
                        frames.push(frame);
                        traj.times.push(t);
                        traj.states.push(u.clone());
                        traj.reports.push(report);
                        if let Some(floor) = track.min_lambda {
                            if lambda < floor {
                                traj.stopped = Some(StopReason::Resolution { t: t.as_f64(), lambda: lambda.as_f64() });
                                break;
                            }
                        }
                    }
                    Err(e) => {
                        traj.stopped = Some(StopReason::Failure { t: t.as_f64(), message: e.to_string() });
                        break;
                    }
                }
            } else {
                traj.times.push(t);
                traj.states.push(u.clone());
                traj.reports.push(report);
            }
        }
        if k == steps {
            break;
        }
        match evolver.step(&u) {
            Ok(next) => u = next,
            Err(e) => {
                let message = match e {
                    CssError::NonFinite { .. } => CssError::Blowup { t: t.as_f64() }.to_string(),
                    other => other.to_string(),
                };
                traj.stopped = Some(StopReason::Failure { t: t.as_f64(), message });
                break;
            }
        }
        k += 1;
    }
    Ok(traj)
}

/// Rms radius `(∫r²|u|² / ∫|u|²)^{1/2}`.
pub fn rms_radius<T: Real>(u: &RadialField<T>) -> T {
    let grid = u.grid();
    let rho = u.density();
    let r2: Vec<T> = rho.iter().zip(grid.nodes()).map(|(&p, &r)| p * r * r).collect();
    (grid.integrate(&r2) / grid.integrate(&rho)).sqrt()
}

fn resample<T: Real>(u: &RadialField<T>, grid: Arc<RadialGrid<T>>, f: impl Fn(&ProfileSpline<T>, T) -> Complex<T>) -> Result<RadialField<T>> {
    let spline = ProfileSpline::new(u.values(), u.m(), u.grid())?;
    let n = grid.n();
    let mut vals: Vec<Complex<T>> = grid.nodes().iter().map(|&r| f(&spline, r)).collect();
    let zero = Complex::new(T::zero(), T::zero());
    vals[n - 1] = zero;
    if u.m() != 0 {
        vals[0] = zero;
    }
    RadialField::new(grid, u.m(), u.g(), vals)
}

/// `λ u(λ r)`, resampled by cubic interpolation.
pub fn rescale<T: Real>(u: &RadialField<T>, lambda: T) -> Result<RadialField<T>> {
    if !(lambda > T::zero() && lambda.is_finite()) {
        return Err(CssError::InvalidParameters(format!("scale must be positive, got {lambda}")));
    }
    let grid = u.grid().clone();
    let scale = rms_radius(u);
    let limit = T::lit(grid.n() as f64) / (T::lit(32.0) * grid.r_max() * scale);
    if lambda > limit {
        log::warn!("rescaling by {:e} beyond the aliasing limit {:e}", lambda.as_f64(), limit.as_f64());
    }
    resample(u, grid, |s, r| s.eval(lambda * r) * lambda)
}

/// `(1/t) conj(u(r/t)) e^{i r²/(4t)}`. For `t < 0` the profile is read
/// through its parity `u(-r) = (-1)^m u(r)`.
pub fn pseudoconformal<T: Real>(u: &RadialField<T>, t: T) -> Result<RadialField<T>> {
    if t == T::zero() || !t.is_finite() {
        return Err(CssError::InvalidParameters("pseudoconformal time must be non-zero".into()));
    }
    let grid = u.grid().clone();
    let inv = T::one() / t;
    let k = inv / T::lit(4.0);
    resample(u, grid, |s, r| s.eval(r * inv).conj() * inv * Complex::from_polar(T::one(), k * r * r))
}

/// The explicit blowup solution
/// `w(t) = (T-t)^{-1} e^{iα/(T-t)} Q(r/(T-t)) e^{-ir²/(4(T-t))}`,
/// the pseudoconformal image of `e^{iαt}Q`.
#[derive(Debug, Clone)]
pub struct BlowupReference<T> {
    pub initial: RadialField<T>,
    pub blowup_time: T,
    pub alpha: T,
    /// Rms radius of `Q`.
    pub soliton_scale: T,
    /// Resolution floor `8 h · scale` for the scale `T - t`.
    pub min_lambda: T,
    /// `T - min_lambda`.
    pub valid_until: T,
}

impl<T: Real> BlowupReference<T> {
    /// `λ_pred(t) = T - t`.
    pub fn lambda(&self, t: T) -> T {
        self.blowup_time - t
    }

    /// `γ_pred(t) = -α/(T - t)`, unreduced.
    pub fn gamma(&self, t: T) -> T {
        -self.alpha / (self.blowup_time - t)
    }

    /// The exact solution at time `t` sampled on the reference grid.
    pub fn state(&self, q: &SolitonProfile<T>, t: T) -> Result<RadialField<T>> {
        blowup_state(q, self.blowup_time, t, self.initial.grid().clone())
    }
}

fn blowup_state<T: Real>(q: &SolitonProfile<T>, blowup_time: T, t: T, grid: Arc<RadialGrid<T>>) -> Result<RadialField<T>> {
    let lam = blowup_time - t;
    let phase = q.alpha / lam;
    let chirp = -T::one() / (T::lit(4.0) * lam);
    resample(&q.field, grid, |s, r| {
        s.eval(r / lam) * Complex::from_polar(T::one() / lam, phase + chirp * r * r)
    })
}

/// Initial data at `t = 0` for the solution blowing up at `blowup_time`.
pub fn pc_blowup_reference<T: Real>(q: &SolitonProfile<T>, blowup_time: T, grid: Arc<RadialGrid<T>>) -> Result<BlowupReference<T>> {
    if !(blowup_time > T::zero() && blowup_time.is_finite()) {
        return Err(CssError::InvalidParameters(format!("blowup time must be positive, got {blowup_time}")));
    }
    let scale = q.scale();
    let floor = T::lit(8.0) * grid.h() * scale;
    if blowup_time < floor {
        return Err(CssError::InvalidParameters(format!(
            "the grid cannot resolve the profile at scale {blowup_time}; need T ≥ {floor}"
        )));
    }
    Ok(BlowupReference {
        initial: blowup_state(q, blowup_time, T::zero(), grid)?,
        blowup_time,
        alpha: q.alpha,
        soliton_scale: scale,
        min_lambda: floor,
        valid_until: blowup_time - floor,
    })
}
