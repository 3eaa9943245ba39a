use thiserror::Error;

use crate::fem::ControlPair;
use crate::sparse::LinearSolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input data or configuration.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("objects live on different meshes")]
    MeshMismatch,

    #[error("norm {kind} is not defined for {object}")]
    NormKind { kind: &'static str, object: &'static str },

    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("linear solver failed: {reason} after {} iterations (relative residual {:e})", report.iterations, report.relative_residual)]
    LinearSolve { reason: String, report: LinearSolveReport },

    #[error("fixed-point iteration did not converge in {iterations} steps (last increment {last_increment:e}, last ratio {last_ratio:e})")]
    FixedPoint { iterations: usize, last_increment: f64, last_ratio: f64, last_iterate: Box<ControlPair> },

    #[error("eigenvalue iteration did not converge in {iterations} steps (last change {last_change:e})")]
    Eigen { iterations: usize, last_change: f64 },

    #[error("optimality system residual {residual:e} exceeds {tolerance:e} in block `{block}`")]
    Optimality { block: &'static str, residual: f64, tolerance: f64 },

    #[error("problem too large for the direct oracle: {unknowns} unknowns (limit {limit})")]
    TooLarge { unknowns: usize, limit: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },
}

impl Error {
    /// True for errors caused by bad input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Mesh(_)
                | Error::Dimension { .. }
                | Error::MeshMismatch
                | Error::NormKind { .. }
                | Error::TooLarge { .. }
                | Error::Io { .. }
                | Error::Config { .. }
        )
    }
}
