//! Linearisation around a standing wave `Q`.
//!
//! For real perturbations `ε`,
//!
//! ```text
//! L_Q ε = (∫_0^r Q ε s ds / r) Q + (∂_r - (m + A_θ[Q])/r) ε
//! ```
//!
//! and the two quadratic forms built on it are
//!
//! ```text
//! coercivity_form(ε)     = ‖L_Q ε‖² + 3(1-g) ∫Q²ε²
//! expansion_quadratic(ε) = (α/2)‖ε‖² + ½‖L_Q ε‖² + (3/2)(1-g) ∫Q²ε²
//! ```
//!
//! [`build_setup`] assembles the first form as a dense symmetric matrix over
//! the interior unknowns and diagonalises it. The module also hosts the
//! modulation fits that split a state into `e^{-iγ} λ^{-1} (Q + ε)(r/λ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{CssError, Result};
use crate::functionals::{bogomolny_residual, energy};
use crate::gauge::compute_gauge_from_density;
use crate::grid::{prefix_integral, radial_derivative, radial_derivative_real, ProfileSpline, RadialField, RadialGrid};
use crate::scalar::Real;
use crate::soliton::SolitonProfile;

/// Largest grid on which [`build_setup`] runs the dense eigensolve.
pub const MAX_SPECTRAL_NODES: usize = 2048;

/// Everything derived from one soliton that the spectral and modulation
/// tools need. Immutable once built.
#[derive(Debug, Clone)]
pub struct LinearizedSetup<T> {
    pub q: SolitonProfile<T>,
    pub a_theta_q: Vec<T>,
    /// Lowest eigenvector of the coercivity form, unit discrete L² norm.
    pub psi: Vec<T>,
    pub lambda_min: T,
    /// Smallest eigenvalue of the form restricted to `{ε ⊥ ψ}`.
    pub lambda_min_projected: T,
    /// `⟨ΛQ, ψ⟩ / (‖ΛQ‖‖ψ‖)` with `ΛQ = Q + r ∂_r Q`; positive by the sign
    /// convention on `ψ`.
    pub transversality: T,
    pub negative_found: bool,
    /// The lowest few eigenvalues, ascending.
    pub spectrum: Vec<T>,
    /// Fitted exponential decay rate of `|ψ|` beyond its peak, if the tail
    /// is resolved.
    pub psi_decay_rate: Option<T>,
    magnetic: Vec<T>,
    form: DMatrix<T>,
    sqrt_w: Vec<T>,
    modulator: Modulator<T>,
}

fn planar_weights<T: Real>(grid: &RadialGrid<T>) -> Vec<T> {
    grid.quad_weights().iter().map(|&w| T::TAU() * w).collect()
}

fn inner<T: Real>(a: &[T], b: &[T], w: &[T]) -> T {
    a.iter().zip(b).zip(w).map(|((&x, &y), &wi)| wi * x * y).sum()
}

fn magnetic<T: Real>(a_theta: &[T], m: i32, grid: &RadialGrid<T>) -> Vec<T> {
    let mm = T::lit(m as f64);
    grid.nodes()
        .iter()
        .zip(a_theta)
        .enumerate()
        .map(|(i, (&r, &a))| if i == 0 { T::zero() } else { (mm + a) / r })
        .collect()
}

impl<T: Real> LinearizedSetup<T> {
    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        self.q.grid()
    }

    /// The modulation fitter attached to this soliton.
    pub fn modulator(&self) -> &Modulator<T> {
        &self.modulator
    }

    /// `(m + A_θ[Q]) / r`, zero at the origin.
    pub fn magnetic_factor(&self) -> &[T] {
        &self.magnetic
    }

    /// The symmetric matrix of the coercivity form in the coordinates
    /// `y_j = √w_j ε_j` over the unknowns `1..n-1`.
    pub fn form_matrix(&self) -> &DMatrix<T> {
        &self.form
    }

    /// Full-length perturbation from interior unknowns `ε_1..ε_{n-2}`: the
    /// outer value is 0 and the origin value is 0 for `m ≠ 0` and the
    /// quadratic extrapolation `(4ε_1 - ε_2)/3` for `m = 0`.
    pub fn embed(&self, interior: &[T]) -> Result<Vec<T>> {
        let n = self.grid().n();
        if interior.len() != n - 2 {
            return Err(CssError::LengthMismatch { expected: n - 2, found: interior.len() });
        }
        let mut out = vec![T::zero(); n];
        out[1..n - 1].copy_from_slice(interior);
        if self.q.m == 0 {
            out[0] = (T::lit(4.0) * out[1] - out[2]) / T::lit(3.0);
        }
        Ok(out)
    }

    /// `ε` with its boundary values replaced as in [`Self::embed`].
    pub fn admissible(&self, eps: &[T]) -> Result<Vec<T>> {
        let n = self.grid().n();
        if eps.len() != n {
            return Err(CssError::LengthMismatch { expected: n, found: eps.len() });
        }
        self.embed(&eps[1..n - 1])
    }

    /// The coercivity form evaluated through the assembled matrix. Agrees
    /// with [`coercivity_form`] for admissible `ε`.
    pub fn assembled_form(&self, eps: &[T]) -> Result<T> {
        let n = self.grid().n();
        if eps.len() != n {
            return Err(CssError::LengthMismatch { expected: n, found: eps.len() });
        }
        let y = DVector::from_iterator(n - 2, (1..n - 1).map(|j| self.sqrt_w[j] * eps[j]));
        Ok(y.dot(&(&self.form * &y)))
    }

    /// Smallest eigenvalue of the form on the L²-orthogonal complement of
    /// `direction`, by a Householder reflection that maps the normalised
    /// direction onto the first coordinate axis.
    pub fn projected_lambda_min(&self, direction: &[T]) -> Result<T> {
        let n = self.grid().n();
        if direction.len() != n {
            return Err(CssError::LengthMismatch { expected: n, found: direction.len() });
        }
        let mut v = DVector::from_iterator(n - 2, (1..n - 1).map(|j| self.sqrt_w[j] * direction[j]));
        let norm = v.dot(&v).sqrt();
        if norm == T::zero() || !norm.is_finite() {
            return Err(CssError::InvalidParameters("projection direction has no interior support".into()));
        }
        v /= norm;
        let sign = if v[0] >= T::zero() { T::one() } else { -T::one() };
        v[0] += sign;
        let vv = v.dot(&v);
        let two = T::lit(2.0);
        let cv = &self.form * &v;
        let vcv = v.dot(&cv);
        let mut reflected = self.form.clone();
        for a in 0..n - 2 {
            for b in 0..n - 2 {
                reflected[(a, b)] += -two * (v[a] * cv[b] + cv[a] * v[b]) / vv + T::lit(4.0) * vcv * v[a] * v[b] / (vv * vv);
            }
        }
        let sub = reflected.view((1, 1), (n - 3, n - 3)).into_owned();
        let sym = (&sub + sub.transpose()) * T::lit(0.5);
        let values = T::symmetric_eigenvalues(sym);
        values.first().copied().filter(|v| v.is_finite()).ok_or_else(|| CssError::EigensolveFailed("projected eigenvalues are not finite".into()))
    }
}

/// `L_Q f` for complex `f`; the integral term uses `Re(Q f̄) = Q Re f`. At
/// the origin the value is the limit `(1 - m) ∂_r f(0)`.
pub fn apply_l_q<T: Real>(setup: &LinearizedSetup<T>, f: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let grid = setup.grid();
    if f.len() != grid.n() {
        return Err(CssError::GridMismatch);
    }
    let q = setup.q.samples();
    let qf: Vec<T> = q.iter().zip(f).map(|(&a, z)| a * z.re).collect();
    let p = prefix_integral(&qf, grid)?;
    let df = radial_derivative(f, grid)?;
    let r = grid.nodes();
    let out: Vec<Complex<T>> = (0..grid.n())
        .map(|i| {
            if i == 0 {
                df[0] * T::lit(1.0 - setup.q.m as f64)
            } else {
                df[i] - f[i] * setup.magnetic[i] + Complex::new(p[i] / r[i] * q[i], T::zero())
            }
        })
        .collect();
    if let Some(index) = out.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(CssError::NonFinite { index });
    }
    Ok(out)
}

/// Real-valued [`apply_l_q`].
pub fn apply_l_q_real<T: Real>(setup: &LinearizedSetup<T>, f: &[T]) -> Result<Vec<T>> {
    let grid = setup.grid();
    if f.len() != grid.n() {
        return Err(CssError::GridMismatch);
    }
    let q = setup.q.samples();
    let qf: Vec<T> = q.iter().zip(f).map(|(&a, &b)| a * b).collect();
    let p = prefix_integral(&qf, grid)?;
    let df = radial_derivative_real(f, grid)?;
    let r = grid.nodes();
    Ok((0..grid.n())
        .map(|i| {
            if i == 0 {
                df[0] * T::lit(1.0 - setup.q.m as f64)
            } else {
                df[i] - setup.magnetic[i] * f[i] + p[i] / r[i] * q[i]
            }
        })
        .collect())
}

fn q_squared_term<T: Real>(setup: &LinearizedSetup<T>, eps: &[T]) -> T {
    let q = setup.q.samples();
    let f: Vec<T> = q.iter().zip(eps).map(|(&a, &e)| a * a * e * e).collect();
    setup.grid().integrate_planar(&f)
}

/// `‖L_Q ε‖² + 3(1-g)∫Q²ε²`.
pub fn coercivity_form<T: Real>(setup: &LinearizedSetup<T>, eps: &[T]) -> Result<T> {
    let l = apply_l_q_real(setup, eps)?;
    let sq: Vec<T> = l.iter().map(|&v| v * v).collect();
    let three = T::lit(3.0);
    Ok(setup.grid().integrate_planar(&sq) + three * (T::one() - setup.q.g) * q_squared_term(setup, eps))
}

/// `(α/2)‖ε‖² + ½‖L_Q ε‖² + (3/2)(1-g)∫Q²ε²`.
pub fn expansion_quadratic<T: Real>(setup: &LinearizedSetup<T>, eps: &[T]) -> Result<T> {
    let l = apply_l_q_real(setup, eps)?;
    let grid = setup.grid();
    let half = T::lit(0.5);
    let sq: Vec<T> = l.iter().map(|&v| v * v).collect();
    let e2: Vec<T> = eps.iter().map(|&v| v * v).collect();
    Ok(half * setup.q.alpha * grid.integrate_planar(&e2)
        + half * grid.integrate_planar(&sq)
        + T::lit(1.5) * (T::one() - setup.q.g) * q_squared_term(setup, eps))
}

/// Assembles and diagonalises the coercivity form around `q`.
///
/// The unknowns are `ε_1..ε_{n-2}` (see [`LinearizedSetup::embed`]). With
/// `G` the matrix of `ε ↦ √w L_Q ε` in the coordinates `y = √w ε`, the form
/// is `GᵀG + 3(1-g) diag(Q²)`.
pub fn build_setup<T: Real>(q: &SolitonProfile<T>) -> Result<LinearizedSetup<T>> {
    let grid = q.grid().clone();
    let n = grid.n();
    if n > MAX_SPECTRAL_NODES {
        return Err(CssError::InvalidParameters(format!(
            "spectral step limited to n ≤ {MAX_SPECTRAL_NODES}; downsample the profile (n = {n})"
        )));
    }
    let m = q.m;
    let qs = q.samples();
    let rho = q.field.density();
    let gauge = compute_gauge_from_density(&rho, m, &grid)?;
    let b = magnetic(&gauge.a_theta, m, &grid);
    let w = planar_weights(&grid);
    let sqrt_w: Vec<T> = w.iter().map(|v| v.sqrt()).collect();
    let r = grid.nodes();
    let h = grid.h();
    let inv2h = T::one() / (T::lit(2.0) * h);
    let unknowns = n - 2;
    let col = |j: usize| j - 1;

    // Row i of √w L_Q ε, written against ε_j and then rescaled by 1/√w_j.
    let mut g = DMatrix::<T>::zeros(n - 1, unknowns);
    for i in 1..n {
        let row = i - 1;
        let add = |j: usize, v: T, g: &mut DMatrix<T>| {
            if j >= 1 && j <= n - 2 {
                g[(row, col(j))] += v;
            } else if j == 0 && m == 0 {
                g[(row, col(1))] += v * T::lit(4.0 / 3.0);
                g[(row, col(2))] -= v / T::lit(3.0);
            }
        };
        if i < n - 1 {
            add(i + 1, inv2h, &mut g);
            add(i - 1, -inv2h, &mut g);
        } else {
            add(n - 1, T::lit(3.0) * inv2h, &mut g);
            add(n - 2, -T::lit(4.0) * inv2h, &mut g);
            add(n - 3, inv2h, &mut g);
        }
        add(i, -b[i], &mut g);
        let factor = qs[i] / r[i] * h;
        for j in 1..i {
            add(j, factor * r[j] * qs[j], &mut g);
        }
        add(i, factor * r[i] * qs[i] * T::lit(0.5), &mut g);
    }
    for row in 0..n - 1 {
        let s = sqrt_w[row + 1];
        for c in 0..unknowns {
            g[(row, c)] *= s / sqrt_w[c + 1];
        }
    }
    let mut form = g.tr_mul(&g);
    let three = T::lit(3.0) * (T::one() - q.g);
    for c in 0..unknowns {
        form[(c, c)] += three * qs[c + 1] * qs[c + 1];
    }

    let (values, vectors) = T::symmetric_eigen(form.clone());
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CssError::EigensolveFailed("non-finite eigenvalues".into()));
    }
    let lambda_min = values[0];
    let mut interior: Vec<T> = (0..unknowns).map(|c| vectors[(c, 0)] / sqrt_w[c + 1]).collect();

    let dq = radial_derivative_real(&qs, &grid)?;
    let lam_q: Vec<T> = (0..n).map(|i| qs[i] + r[i] * dq[i]).collect();
    let mut psi = embed_with(m, &interior);
    let mut pairing = inner(&lam_q, &psi, &w);
    if pairing < T::zero() {
        interior.iter_mut().for_each(|v| *v = -*v);
        psi = embed_with(m, &interior);
        pairing = -pairing;
    }
    let transversality = pairing / (inner(&lam_q, &lam_q, &w).sqrt() * inner(&psi, &psi, &w).sqrt());

    let mut setup = LinearizedSetup {
        modulator: Modulator::new(q)?,
        q: q.clone(),
        a_theta_q: gauge.a_theta,
        psi_decay_rate: decay_rate(&psi, r),
        psi,
        lambda_min,
        lambda_min_projected: T::nan(),
        transversality,
        negative_found: lambda_min < T::zero(),
        spectrum: values.iter().take(6).copied().collect(),
        magnetic: b,
        form,
        sqrt_w,
    };
    setup.lambda_min_projected = setup.projected_lambda_min(&setup.psi.clone())?;
    log::info!(
        "spectrum m={} g={}: λ_min={:e} projected={:e} transversality={:e} ψ decay={:?}",
        m,
        q.g,
        setup.lambda_min,
        setup.lambda_min_projected,
        setup.transversality,
        setup.psi_decay_rate
    );
    Ok(setup)
}

fn embed_with<T: Real>(m: i32, interior: &[T]) -> Vec<T> {
    let n = interior.len() + 2;
    let mut out = vec![T::zero(); n];
    out[1..n - 1].copy_from_slice(interior);
    if m == 0 {
        out[0] = (T::lit(4.0) * out[1] - out[2]) / T::lit(3.0);
    }
    out
}

fn decay_rate<T: Real>(psi: &[T], r: &[T]) -> Option<T> {
    let (peak, top) = psi
        .iter()
        .map(|v| v.abs())
        .enumerate()
        .fold((0, T::zero()), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let pts: Vec<(T, T)> = (peak..psi.len())
        .filter(|&i| {
            let a = psi[i].abs();
            a < T::lit(1e-3) * top && a > T::lit(1e-10) * top
        })
        .map(|i| (r[i], psi[i].abs().ln()))
        .collect();
    if pts.len() < 5 {
        return None;
    }
    let slope = least_squares_slope(&pts)?;
    Some(-slope)
}

fn least_squares_slope<T: Real>(pts: &[(T, T)]) -> Option<T> {
    if pts.len() < 2 {
        return None;
    }
    let k = T::lit(pts.len() as f64);
    let mx = pts.iter().map(|p| p.0).sum::<T>() / k;
    let my = pts.iter().map(|p| p.1).sum::<T>() / k;
    let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > T::zero()).then(|| sxy / sxx)
}

/// One perturbation size of an expansion check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionRow<T> {
    pub h: T,
    pub eps_l2: T,
    /// `E[Q+ε] - E[Q] - expansion_quadratic(ε)`.
    pub remainder: T,
    /// Same with the `Q²ε²` coefficient doubled to `3(1-g)`.
    pub remainder_wrong: T,
    /// `remainder` minus the cubic cross term `⟨D_Q Q, S₂(ε)⟩`, which only
    /// vanishes when `Q` satisfies the Bogomolny equation.
    pub remainder_corrected: T,
}

/// Log-log slopes of the remainders against `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport<T> {
    pub rows: Vec<ExpansionRow<T>>,
    pub slope: Option<T>,
    pub slope_wrong: Option<T>,
    pub slope_corrected: Option<T>,
    /// Every remainder is below `1e-14`; slopes are meaningless.
    pub degenerate: bool,
}

const DEGENERATE_FLOOR: f64 = 1e-14;

fn loglog_slope<T: Real>(hs: &[T], values: &[T]) -> Option<T> {
    let pts: Vec<(T, T)> = hs
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > T::lit(DEGENERATE_FLOOR))
        .map(|(&h, &v)| (h.ln(), v.abs().ln()))
        .collect();
    least_squares_slope(&pts)
}

/// Compares `E[Q + ε_h]` with the quadratic expansion for `ε_h` obtained
/// from `Q + h·d` rescaled to the mass of `Q`, where `d` is `direction`
/// normalised to unit L² norm (so `‖ε_h‖ ≈ h`).
///
/// The energy of `Q` itself is subtracted; it vanishes in the continuum
/// but is `O(Δr²)` on the grid.
pub fn energy_expansion_check<T: Real>(setup: &LinearizedSetup<T>, direction: &[T], h_values: &[T]) -> Result<ExpansionReport<T>> {
    let grid = setup.grid();
    let n = grid.n();
    if direction.len() != n {
        return Err(CssError::LengthMismatch { expected: n, found: direction.len() });
    }
    let q = setup.q.samples();
    let w = planar_weights(grid);
    let mass_q = inner(&q, &q, &w);
    let dnorm = inner(direction, direction, &w).sqrt();
    let unit: Vec<T> = if dnorm > T::zero() { direction.iter().map(|&d| d / dnorm).collect() } else { direction.to_vec() };
    let e_q = energy(&setup.q.field)?;
    let dqq: Vec<T> = bogomolny_residual(&setup.q.field)?.iter().map(|z| z.re).collect();
    let r = grid.nodes();
    let half = T::lit(0.5);
    let mut rows = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let raw: Vec<T> = q.iter().zip(&unit).map(|(&a, &d)| a + h * d).collect();
        let scale = (mass_q / inner(&raw, &raw, &w)).sqrt();
        let perturbed: Vec<T> = raw.iter().map(|&v| v * scale).collect();
        let eps: Vec<T> = perturbed.iter().zip(&q).map(|(&a, &b)| a - b).collect();
        let field = RadialField::from_real(grid.clone(), setup.q.m, setup.q.g, &perturbed)?;
        let de = energy(&field)? - e_q;
        let quad = expansion_quadratic(setup, &eps)?;
        let extra = T::lit(1.5) * (T::one() - setup.q.g) * q_squared_term(setup, &eps);
        let remainder = de - quad;

        let qe: Vec<T> = q.iter().zip(&eps).map(|(&a, &b)| a * b).collect();
        let ee: Vec<T> = eps.iter().map(|&v| v * v).collect();
        let p1 = prefix_integral(&qe, grid)?;
        let p2 = prefix_integral(&ee, grid)?;
        let s2: Vec<T> = (0..n)
            .map(|i| if i == 0 { T::zero() } else { (half * p2[i] * q[i] + p1[i] * eps[i]) / r[i] })
            .collect();
        let cross = inner(&dqq, &s2, &w);
        rows.push(ExpansionRow {
            h,
            eps_l2: inner(&eps, &eps, &w).sqrt(),
            remainder,
            remainder_wrong: remainder - extra,
            remainder_corrected: remainder - cross,
        });
    }
    let degenerate = rows.iter().all(|row| row.remainder.abs() < T::lit(DEGENERATE_FLOOR));
    let col = |f: fn(&ExpansionRow<T>) -> T| -> Option<T> {
        if degenerate {
            return None;
        }
        let vals: Vec<T> = rows.iter().map(f).collect();
        loglog_slope(h_values, &vals)
    };
    Ok(ExpansionReport {
        slope: col(|r| r.remainder),
        slope_wrong: col(|r| r.remainder_wrong),
        slope_corrected: col(|r| r.remainder_corrected),
        rows,
        degenerate,
    })
}

/// Which condition fixes `(λ, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Least-squares distance to the soliton orbit.
    Nearest,
    /// `⟨Re ε, ψ⟩ = ⟨Im ε, ψ⟩ = 0`.
    Orthogonal,
}

impl std::str::FromStr for FitMode {
    type Err = CssError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(FitMode::Nearest),
            "orthogonal" => Ok(FitMode::Orthogonal),
            other => Err(CssError::InvalidParameters(format!("unknown fit mode {other:?}"))),
        }
    }
}

/// A state written as `u = e^{-iγ} λ^{-1} (Q + ε)(r/λ)`.
#[derive(Debug, Clone)]
pub struct ModulationFrame<T> {
    pub lambda: T,
    /// Reduced to `(-π, π]`.
    pub gamma: T,
    /// `e^{iγ} λ u(λ r) - Q`, on the grid of `Q`.
    pub epsilon: RadialField<T>,
    pub eps_l2: T,
    pub mode: FitMode,
    /// Final gradient norm (nearest) or constraint norm (orthogonal).
    pub residual: T,
    /// `(⟨Re ε, ψ⟩, ⟨Im ε, ψ⟩)` when `ψ` was available.
    pub orthogonality: Option<(T, T)>,
    /// Gauss–Newton Hessian of the nearest fit in `(λ, γ)`.
    pub hessian: [[T; 2]; 2],
    pub iterations: usize,
}

/// Reduces an angle to `(-π, π]`.
pub fn reduce_angle<T: Real>(gamma: T) -> T {
    let mut g = gamma % T::TAU();
    if g > T::PI() {
        g -= T::TAU();
    } else if g <= -T::PI() {
        g += T::TAU();
    }
    g
}

/// Fits states against one soliton. Cheap to build; needs no eigensolve
/// unless the orthogonal mode is used.
#[derive(Debug, Clone)]
pub struct Modulator<T> {
    grid: Arc<RadialGrid<T>>,
    m: i32,
    g: T,
    q: Vec<T>,
    spline: ProfileSpline<T>,
    weights: Vec<T>,
    mass: T,
    second_moment: T,
}

const MAX_GN_ITERATIONS: usize = 200;
const MAX_ORTHO_ITERATIONS: usize = 60;

impl<T: Real> Modulator<T> {
    pub fn new(q: &SolitonProfile<T>) -> Result<Self> {
        let grid = q.grid().clone();
        let samples = q.samples();
        let spline = ProfileSpline::new(q.field.values(), q.m, &grid)?;
        let weights = planar_weights(&grid);
        let mass = inner(&samples, &samples, &weights);
        let r2: Vec<T> = samples.iter().zip(grid.nodes()).map(|(&v, &r)| v * v * r * r).collect();
        let second_moment = grid.integrate_planar(&r2);
        Ok(Modulator { grid, m: q.m, g: q.g, q: samples, spline, weights, mass, second_moment })
    }

    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        &self.grid
    }

    /// `e^{-iγ} λ^{-1} Q(r/λ)` on the grid.
    pub fn orbit_point(&self, lambda: T, gamma: T) -> Result<RadialField<T>> {
        let rot = Complex::from_polar(T::one() / lambda, -gamma);
        let n = self.grid.n();
        let mut vals: Vec<Complex<T>> = self.grid.nodes().iter().map(|&r| rot * self.spline.eval(r / lambda)).collect();
        vals[n - 1] = Complex::new(T::zero(), T::zero());
        if self.m != 0 {
            vals[0] = Complex::new(T::zero(), T::zero());
        }
        RadialField::new(self.grid.clone(), self.m, self.g, vals)
    }

    /// Moment-based guess: `λ` from the second moments, `γ` from the phase
    /// of the overlap with the rescaled profile.
    pub fn seed(&self, u: &RadialField<T>) -> (T, T) {
        let rho = u.density();
        let r2: Vec<T> = rho.iter().zip(self.grid.nodes()).map(|(&p, &r)| p * r * r).collect();
        let mu = self.grid.integrate_planar(&rho);
        let lambda = ((self.grid.integrate_planar(&r2) / mu) / (self.second_moment / self.mass)).sqrt();
        let lambda = if lambda.is_finite() && lambda > T::zero() { lambda } else { T::one() };
        self.seed_with_scale(u, lambda)
    }

    /// `(λ, γ)` with `γ` the phase that best aligns `u` with the profile at
    /// the given scale.
    pub fn seed_with_scale(&self, u: &RadialField<T>, lambda: T) -> (T, T) {
        let overlap: Complex<T> = u
            .values()
            .iter()
            .zip(self.grid.nodes())
            .zip(&self.weights)
            .map(|((&z, &r), &w)| z * self.spline.eval(r / lambda).re * w)
            .sum();
        (lambda, -overlap.arg())
    }

    fn check(&self, u: &RadialField<T>) -> Result<()> {
        if u.grid().n() != self.grid.n() || u.grid().r_max() != self.grid.r_max() || u.m() != self.m {
            return Err(CssError::GridMismatch);
        }
        let mu = self.grid.integrate_planar(&u.density());
        if (mu / self.mass - T::one()).abs() > T::lit(0.21) {
            return Err(CssError::BasinEscape(format!(
                "mass {:e} is outside 10% in norm of the soliton mass {:e}",
                mu.as_f64(),
                self.mass.as_f64()
            )));
        }
        Ok(())
    }

    /// `e^{iγ} λ ũ(λ r) - Q` with `ũ` the spline of `u`.
    fn remainder(&self, spline: &ProfileSpline<T>, lambda: T, gamma: T) -> Vec<Complex<T>> {
        let rot = Complex::from_polar(lambda, gamma);
        let n = self.grid.n();
        let mut out: Vec<Complex<T>> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.q)
            .map(|(&r, &q)| rot * spline.eval(lambda * r) - q)
            .collect();
        out[n - 1] = Complex::new(T::zero(), T::zero());
        if self.m != 0 {
            out[0] = Complex::new(T::zero(), T::zero());
        }
        out
    }

    fn pairings(&self, eps: &[Complex<T>], psi: &[T]) -> (T, T) {
        eps.iter().zip(psi).zip(&self.weights).fold((T::zero(), T::zero()), |acc, ((z, &p), &w)| {
            (acc.0 + w * p * z.re, acc.1 + w * p * z.im)
        })
    }

    /// Runs the fit. `psi` is required for [`FitMode::Orthogonal`].
    pub fn fit(&self, u: &RadialField<T>, mode: FitMode, psi: Option<&[T]>, seed: Option<(T, T)>) -> Result<ModulationFrame<T>> {
        self.check(u)?;
        let seed = seed.unwrap_or_else(|| self.seed(u));
        let (mut lambda, mut gamma, hessian, grad, mut iterations) = self.nearest(u, seed)?;
        let spline = ProfileSpline::new(u.values(), self.m, &self.grid)?;
        let mut residual = grad;
        let mut eps = self.remainder(&spline, lambda, gamma);
        if mode == FitMode::Orthogonal {
            let psi = psi.ok_or_else(|| CssError::InvalidParameters("orthogonal fit needs ψ".into()))?;
            let (l, g, res, its) = self.orthogonal(&spline, psi, (lambda, gamma), seed.0)?;
            lambda = l;
            gamma = g;
            residual = res;
            iterations += its;
            eps = self.remainder(&spline, lambda, gamma);
        }
        let orthogonality = psi.map(|p| self.pairings(&eps, p));
        let epsilon = RadialField::new(self.grid.clone(), self.m, self.g, eps)?;
        let e2 = epsilon.density();
        Ok(ModulationFrame {
            lambda,
            gamma: reduce_angle(gamma),
            eps_l2: self.grid.integrate_planar(&e2).sqrt(),
            epsilon,
            mode,
            residual,
            orthogonality,
            hessian,
            iterations,
        })
    }

    fn escape_check(&self, lambda: T, seed_lambda: T) -> Result<()> {
        let four = T::lit(4.0);
        if !lambda.is_finite() || lambda < seed_lambda / four || lambda > seed_lambda * four {
            return Err(CssError::BasinEscape(format!(
                "λ = {:e} left [{:e}, {:e}]",
                lambda.as_f64(),
                (seed_lambda / four).as_f64(),
                (seed_lambda * four).as_f64()
            )));
        }
        Ok(())
    }

    /// Levenberg–Marquardt on `Σ w |u - e^{-iγ} λ^{-1} Q(r/λ)|²`.
    #[allow(clippy::type_complexity)]
    fn nearest(&self, u: &RadialField<T>, seed: (T, T)) -> Result<(T, T, [[T; 2]; 2], T, usize)> {
        let (mut lambda, mut gamma) = seed;
        let nodes = self.grid.nodes();
        let uv = u.values();
        let eval = |lambda: T, gamma: T| -> (T, [[T; 2]; 2], [T; 2]) {
            let rot = Complex::from_polar(T::one(), -gamma);
            let mut phi = T::zero();
            let mut hess = [[T::zero(); 2]; 2];
            let mut grad = [T::zero(); 2];
            let inv = T::one() / lambda;
            for i in 0..nodes.len() {
                let w = self.weights[i];
                if w == T::zero() {
                    continue;
                }
                let s = nodes[i] * inv;
                let qv = self.spline.eval(s);
                let dq = self.spline.eval_derivative(s);
                let model = rot * qv * inv;
                let res = uv[i] - model;
                // Derivatives of the residual.
                let j_l = rot * (qv + dq * s) * (inv * inv);
                let j_g = Complex::new(T::zero(), T::one()) * model;
                phi += w * res.norm_sqr();
                let jj = [j_l, j_g];
                for a in 0..2 {
                    grad[a] += w * (jj[a].conj() * res).re;
                    for b in 0..2 {
                        hess[a][b] += w * (jj[a].conj() * jj[b]).re;
                    }
                }
            }
            (phi, hess, grad)
        };
        let (mut phi, mut hess, mut grad) = eval(lambda, gamma);
        let mut mu = T::lit(1e-3);
        let mut its = 0;
        while its < MAX_GN_ITERATIONS {
            its += 1;
            let a = [[hess[0][0] * (T::one() + mu), hess[0][1]], [hess[1][0], hess[1][1] * (T::one() + mu)]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if !(det.is_finite() && det > T::zero()) {
                return Err(CssError::BasinEscape("singular Gauss–Newton system".into()));
            }
            let dl = -(a[1][1] * grad[0] - a[0][1] * grad[1]) / det;
            let dg = -(a[0][0] * grad[1] - a[1][0] * grad[0]) / det;
            let trial_l = lambda + dl;
            if trial_l <= T::zero() {
                mu *= T::lit(4.0);
                continue;
            }
            let (p2, h2, g2) = eval(trial_l, gamma + dg);
            if p2 <= phi {
                lambda = trial_l;
                gamma += dg;
                let small = dl.abs() / lambda + dg.abs() < T::lit(1e-14);
                phi = p2;
                hess = h2;
                grad = g2;
                mu = (mu / T::lit(3.0)).max(T::lit(1e-12));
                self.escape_check(lambda, seed.0)?;
                if small {
                    break;
                }
            } else {
                mu *= T::lit(4.0);
                if mu > T::lit(1e12) {
                    break;
                }
            }
        }
        let gnorm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        Ok((lambda, gamma, hess, gnorm, its))
    }

    /// Newton on the two pairings with a central-difference Jacobian.
    fn orthogonal(&self, spline: &ProfileSpline<T>, psi: &[T], start: (T, T), seed_lambda: T) -> Result<(T, T, T, usize)> {
        if psi.len() != self.grid.n() {
            return Err(CssError::LengthMismatch { expected: self.grid.n(), found: psi.len() });
        }
        let constraint = |l: T, g: T| -> (T, T) { self.pairings(&self.remainder(spline, l, g), psi) };
        let norm = |c: (T, T)| (c.0 * c.0 + c.1 * c.1).sqrt();
        let (mut lambda, mut gamma) = start;
        let mut c = constraint(lambda, gamma);
        let mut its = 0;
        while its < MAX_ORTHO_ITERATIONS {
            let eps = self.remainder(spline, lambda, gamma);
            let e2: T = eps.iter().zip(&self.weights).map(|(z, &w)| w * z.norm_sqr()).sum();
            if norm(c) <= T::lit(1e-14) * e2.sqrt() || norm(c) == T::zero() {
                break;
            }
            its += 1;
            let dl = T::lit(1e-6) * lambda;
            let dg = T::lit(1e-6);
            let cp = constraint(lambda + dl, gamma);
            let cm = constraint(lambda - dl, gamma);
            let gp = constraint(lambda, gamma + dg);
            let gm = constraint(lambda, gamma - dg);
            let two = T::lit(2.0);
            let j = [
                [(cp.0 - cm.0) / (two * dl), (gp.0 - gm.0) / (two * dg)],
                [(cp.1 - cm.1) / (two * dl), (gp.1 - gm.1) / (two * dg)],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det.is_finite() && det != T::zero()) {
                return Err(CssError::BasinEscape("orthogonality Jacobian is singular".into()));
            }
            let sl = -(j[1][1] * c.0 - j[0][1] * c.1) / det;
            let sg = -(j[0][0] * c.1 - j[1][0] * c.0) / det;
            let mut t = T::one();
            let mut accepted = false;
            for _ in 0..20 {
                let (l2, g2) = (lambda + t * sl, gamma + t * sg);
                if l2 > T::zero() {
                    let c2 = constraint(l2, g2);
                    if norm(c2) < norm(c) {
                        lambda = l2;
                        gamma = g2;
                        c = c2;
                        accepted = true;
                        break;
                    }
                }
                t *= T::lit(0.5);
            }
            self.escape_check(lambda, seed_lambda)?;
            if !accepted {
                break;
            }
        }
        Ok((lambda, gamma, norm(c), its))
    }
}

/// Fits `u` against the soliton of `setup`.
pub fn fit_modulation<T: Real>(u: &RadialField<T>, setup: &LinearizedSetup<T>, mode: FitMode) -> Result<ModulationFrame<T>> {
    setup.modulator.fit(u, mode, Some(&setup.psi), None)
}

/// [`fit_modulation`] with an explicit starting point.
pub fn fit_modulation_from<T: Real>(
    u: &RadialField<T>,
    setup: &LinearizedSetup<T>,
    mode: FitMode,
    seed: (T, T),
) -> Result<ModulationFrame<T>> {
    setup.modulator.fit(u, mode, Some(&setup.psi), Some(seed))
}

/// `e^{-iγ} λ^{-1} (Q + ε)(r/λ)` resampled on the grid, undoing a fit.
pub fn reconstruct<T: Real>(frame: &ModulationFrame<T>, q: &SolitonProfile<T>) -> Result<RadialField<T>> {
    let grid = q.grid();
    let sum: Vec<Complex<T>> = q.field.values().iter().zip(frame.epsilon.values()).map(|(&a, &b)| a + b).collect();
    let spline = ProfileSpline::new(&sum, q.m, grid)?;
    let rot = Complex::from_polar(T::one() / frame.lambda, -frame.gamma);
    let n = grid.n();
    let mut vals: Vec<Complex<T>> = grid.nodes().iter().map(|&r| rot * spline.eval(r / frame.lambda)).collect();
    vals[n - 1] = Complex::new(T::zero(), T::zero());
    if q.m != 0 {
        vals[0] = Complex::new(T::zero(), T::zero());
    }
    RadialField::new(grid.clone(), q.m, q.g, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;
    use crate::perturb::{smooth_direction, uniform_vector};
    use crate::soliton::{selfdual_soliton, solve_standing_wave, SolverOptions};
    use std::sync::OnceLock;

    fn selfdual_setup(m: i32, n: usize, r_max: f64) -> LinearizedSetup<f64> {
        build_setup(&selfdual_soliton(m, make_uniform_grid(n, r_max).unwrap()).unwrap()).unwrap()
    }

    fn nonselfdual() -> &'static LinearizedSetup<f64> {
        static SETUP: OnceLock<LinearizedSetup<f64>> = OnceLock::new();
        SETUP.get_or_init(|| {
            let grid = make_uniform_grid(400, 20.0).unwrap();
            let q = solve_standing_wave(1, 1.5, 1.0, grid, &SolverOptions::default()).unwrap();
            build_setup(&q).unwrap()
        })
    }

    #[test]
    fn zero_input_gives_zero() {
        let s = selfdual_setup(1, 200, 15.0);
        let z = vec![Complex::new(0.0, 0.0); 200];
        assert!(apply_l_q(&s, &z).unwrap().iter().all(|v| v.norm() == 0.0));
        assert_eq!(coercivity_form(&s, &[0.0; 200]).unwrap(), 0.0);
        assert_eq!(expansion_quadratic(&s, &[0.0; 200]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let s = selfdual_setup(1, 100, 15.0);
        assert!(matches!(apply_l_q(&s, &[Complex::new(0.0, 0.0); 99]), Err(CssError::GridMismatch)));
        assert!(s.embed(&[0.0; 3]).is_err());
    }

    fn closed_form_gap(n: usize) -> f64 {
        let s = selfdual_setup(0, n, 40.0);
        let q = s.q.field.values().to_vec();
        let lq = apply_l_q(&s, &q).unwrap();
        let r = s.grid().nodes();
        // The outer nodes feel the truncation of the algebraic tail at r_max.
        (1..r.len() / 2)
            .map(|i| {
                assert_eq!(lq[i].im, 0.0);
                (lq[i].re - 4.0 * r[i] / (1.0 + r[i] * r[i]) * q[i].re).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn selfdual_l_q_of_q_matches_closed_form() {
        let coarse = closed_form_gap(501);
        let fine = closed_form_gap(1001);
        assert!(fine < 5e-3, "sup error {fine:e}");
        assert!(coarse / fine > 3.5, "ratio {}", coarse / fine);
    }

    #[test]
    fn l_q_is_real_linear() {
        let s = selfdual_setup(1, 300, 20.0);
        let grid = s.grid().clone();
        let f = crate::perturb::smooth_complex_direction(&grid, 1, 5.0, 3);
        let g = crate::perturb::smooth_complex_direction(&grid, 1, 5.0, 4);
        let (a, b) = (0.37, -1.9);
        let combo: Vec<_> = f.iter().zip(&g).map(|(&x, &y)| x * a + y * b).collect();
        let lhs = apply_l_q(&s, &combo).unwrap();
        let lf = apply_l_q(&s, &f).unwrap();
        let lg = apply_l_q(&s, &g).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs[i] - (lf[i] * a + lg[i] * b)).norm() < 1e-12 * (1.0 + lhs[i].norm()));
        }
    }

    #[test]
    fn selfdual_form_is_semidefinite() {
        for m in 0..3 {
            let s = selfdual_setup(m, 300, 20.0);
            assert!(s.lambda_min >= -1e-10, "m={m} λ_min={}", s.lambda_min);
            let eps = s.admissible(&smooth_direction(s.grid(), m, 4.0, 9)).unwrap();
            assert!(coercivity_form(&s, &eps).unwrap() >= 0.0);
        }
    }

    #[test]
    fn assembled_matrix_is_symmetric_and_matches_matrix_free_form() {
        let s = nonselfdual();
        let a = s.form_matrix();
        let scale = a.amax();
        for i in 0..a.nrows() {
            for j in 0..i {
                assert!((a[(i, j)] - a[(j, i)]).abs() <= 1e-12 * scale);
            }
        }
        let n = s.grid().n();
        for seed in 0..20 {
            let x: Vec<f64> = uniform_vector(n - 2, seed);
            let eps = s.embed(&x).unwrap();
            let free = coercivity_form(s, &eps).unwrap();
            let mat = s.assembled_form(&eps).unwrap();
            assert!((free - mat).abs() <= 1e-10 * free.abs().max(mat.abs()), "seed {seed}: {free} vs {mat}");
        }
    }

    #[test]
    fn psi_is_a_normalised_eigenvector() {
        let s = nonselfdual();
        let w = planar_weights(s.grid());
        assert!((inner(&s.psi, &s.psi, &w) - 1.0).abs() < 1e-12);
        let rq = coercivity_form(s, &s.psi).unwrap();
        assert!((rq - s.lambda_min).abs() < 1e-10, "{rq} vs {}", s.lambda_min);
        assert!(s.transversality > 0.0);
        assert!((s.spectrum[0] - s.lambda_min).abs() == 0.0);
    }

    #[test]
    fn projection_onto_eigenvector_gives_second_eigenvalue() {
        let s = nonselfdual();
        let l2 = s.spectrum[1];
        assert!((s.lambda_min_projected - l2).abs() < 1e-9 * l2.abs().max(1.0), "{} vs {l2}", s.lambda_min_projected);
    }

    #[test]
    fn negative_direction_exists_away_from_selfdual() {
        let s = nonselfdual();
        assert!(s.negative_found);
        assert!(coercivity_form(s, &s.psi).unwrap() < 0.0);
    }

    #[test]
    fn expansion_of_zero_direction_is_degenerate() {
        let s = nonselfdual();
        let rep = energy_expansion_check(s, &vec![0.0; s.grid().n()], &[0.1, 0.01]).unwrap();
        assert!(rep.degenerate);
        assert!(rep.rows.iter().all(|r| r.remainder == 0.0 && r.eps_l2 == 0.0));
        assert!(rep.slope.is_none());
    }

    #[test]
    fn trivial_fit_recovers_identity() {
        let s = nonselfdual();
        let f = fit_modulation(&s.q.field, s, FitMode::Nearest).unwrap();
        assert!((f.lambda - 1.0).abs() < 1e-12 && f.gamma.abs() < 1e-12);
        assert!(f.eps_l2 < 1e-12);
    }

    #[test]
    fn synthetic_orbit_point_is_recovered() {
        let s = nonselfdual();
        let u = s.modulator().orbit_point(1.3, 0.7).unwrap();
        let f = fit_modulation(&u, s, FitMode::Nearest).unwrap();
        assert!((f.lambda - 1.3).abs() < 1e-8, "λ={}", f.lambda);
        assert!((f.gamma - 0.7).abs() < 1e-8, "γ={}", f.gamma);
        let h = f.hessian;
        assert!(h[0][0] > 0.0 && h[0][0] * h[1][1] - h[0][1] * h[1][0] > 0.0);
        // The orthogonal fit works on the resampled remainder, so it is only
        // as exact as the interpolation.
        let f = fit_modulation(&u, s, FitMode::Orthogonal).unwrap();
        assert!((f.lambda - 1.3).abs() < 1e-6 && (f.gamma - 0.7).abs() < 1e-6);
    }

    #[test]
    fn gamma_is_reduced() {
        assert!((reduce_angle(7.0f64) - (7.0 - std::f64::consts::TAU)).abs() < 1e-15);
        assert_eq!(reduce_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert!((reduce_angle(-std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_fit_kills_both_pairings() {
        let s = nonselfdual();
        let grid = s.grid().clone();
        let d = crate::perturb::smooth_complex_direction(&grid, 1, 4.0, 11);
        let vals: Vec<_> = s.q.field.values().iter().zip(&d).map(|(&a, &b)| a + b * 0.02).collect();
        let u = RadialField::new(grid, 1, 1.5, vals).unwrap();
        let f = fit_modulation(&u, s, FitMode::Orthogonal).unwrap();
        let (a, b) = f.orthogonality.unwrap();
        assert!(a.abs() < 1e-10 * f.eps_l2 && b.abs() < 1e-10 * f.eps_l2, "{a:e} {b:e} ‖ε‖={:e}", f.eps_l2);
    }

    #[test]
    fn reconstruction_reproduces_state() {
        let s = nonselfdual();
        let grid = s.grid().clone();
        let d = crate::perturb::smooth_complex_direction(&grid, 1, 4.0, 5);
        let base = s.modulator().orbit_point(1.1, -0.4).unwrap();
        let vals: Vec<_> = base.values().iter().zip(&d).map(|(&a, &b)| a + b * 0.01).collect();
        let u = base.with_values(vals).unwrap();
        let f = fit_modulation(&u, s, FitMode::Orthogonal).unwrap();
        let back = reconstruct(&f, &s.q).unwrap();
        let err = back.values().iter().zip(u.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-5, "reconstruction error {err:e}");
    }

    #[test]
    fn far_states_escape_the_basin() {
        let s = nonselfdual();
        let u = RadialField::zeros(s.grid().clone(), 1, 1.5);
        assert!(matches!(fit_modulation(&u, s, FitMode::Nearest), Err(CssError::BasinEscape(_))));
    }

    #[test]
    fn large_grids_are_refused() {
        let q = selfdual_soliton(1, make_uniform_grid(MAX_SPECTRAL_NODES + 1, 40.0).unwrap()).unwrap();
        assert!(matches!(build_setup(&q), Err(CssError::InvalidParameters(_))));
    }
}
