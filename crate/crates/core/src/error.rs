use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum CssError {
    #[error("grid too small: n = {n}, at least {min} nodes are required")]
    GridTooSmall { n: usize, min: usize },

    #[error("grid extent must be positive and finite, got r_max = {0}")]
    InvalidExtent(f64),

    #[error("length mismatch: expected {expected} samples, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("field violates its boundary condition: {0}")]
    Boundary(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },

    #[error("missing metadata key `{0}`")]
    MissingKey(String),

    #[error("unsupported format_version={0} (this build reads version 1)")]
    UnsupportedVersion(String),

    #[error("Newton iteration diverged, last residual {residual:e}")]
    NewtonDiverged { residual: f64 },

    #[error("converged profile changes sign near r = {r}")]
    OffBranch { r: f64 },

    #[error("grid too coarse: residual stagnated at {residual:e}")]
    GridTooCoarse { residual: f64 },

    #[error("analytic Jacobian disagrees with finite differences, relative error {0:e}")]
    JacobianMismatch(f64),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("eigensolver failed: {0}")]
    EigensolveFailed(String),

    #[error("modulation fit left its basin: {0}")]
    BasinEscape(String),

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("state became non-finite at t = {t}")]
    Blowup { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CssError>;
