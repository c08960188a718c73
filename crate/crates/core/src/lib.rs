//! Numerical laboratory for the `m`-equivariant Chern–Simons–Schrödinger
//! equation
//!
//! ```text
//! i u_t + Δ_m u = (2m/r²) A_θ u + A_0 u + (A_θ²/r²) u - g |u|² u
//! ```
//!
//! on a uniform radial grid: gauge potentials, conserved functionals,
//! standing waves, the linearised operator around them, modulation fits and
//! a structure-preserving split-step integrator.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`.

pub mod error;
pub mod evolve;
pub mod functionals;
pub mod gauge;
pub mod grid;
pub mod io;
pub mod linops;
pub mod perturb;
pub mod scalar;
pub mod soliton;
pub mod stencil;

pub use error::{CssError, Result};
pub use scalar::Real;

pub type Grid = grid::RadialGrid<f64>;
pub type Field = grid::RadialField<f64>;
pub type Gauge = gauge::GaugePair<f64>;
pub type Soliton = soliton::SolitonProfile<f64>;
pub type Report = functionals::ConservedReport<f64>;
pub type Setup = linops::LinearizedSetup<f64>;
pub type Frame = linops::ModulationFrame<f64>;
pub type Config = evolve::EvolutionConfig<f64>;
pub type Trajectory = evolve::Trajectory<f64>;
