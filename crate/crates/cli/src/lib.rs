//! Experiment runner for `css-core`: single-shot subcommands plus
//! reproducible parameter studies.

pub mod commands;
pub mod config;
pub mod error;
pub mod study;

use css_core::Field;

pub use config::{StudyConfig, StudyKind};
pub use error::{CliError, CliResult};
pub use study::{run_study, StudyReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fraction of the mass carried by the outer tenth of the grid.
pub fn boundary_mass_fraction(u: &Field) -> f64 {
    let grid = u.grid();
    let cut = 0.9 * grid.r_max();
    let rho = u.density();
    let outer: Vec<f64> = rho.iter().zip(grid.nodes()).map(|(&p, &r)| if r >= cut { p } else { 0.0 }).collect();
    let total = grid.integrate(&rho);
    if total == 0.0 {
        0.0
    } else {
        grid.integrate(&outer) / total
    }
}
