use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants split into two families: input/validation problems and
/// solver/convergence problems. [`Error::is_solver_failure`] tells them apart
/// (the CLI maps them to exit codes 1 and 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("empty matching data")]
    EmptyMatching,

    #[error("zero marginal entry on the {side} side at index {index}")]
    ZeroMarginal { side: &'static str, index: usize },

    #[error("non-finite cost at ({i}, {j})")]
    NonFiniteCost { i: usize, j: usize },

    #[error("kernel argument out of range at ({i}, {j}): |gamma*t + c0| = {magnitude:e}")]
    KernelOverflow { i: usize, j: usize, magnitude: f64 },

    #[error("sinkhorn did not converge after {iterations} sweeps (marginal error {marginal_error:e})")]
    SinkhornNotConverged {
        iterations: usize,
        marginal_error: f64,
        last_plan: Box<ndarray::Array2<f64>>,
    },

    #[error("multiplier root not found in [{lo:e}, {hi:e}] after {steps} steps")]
    RootNotFound { lo: f64, hi: f64, steps: usize },

    #[error("non-positive scaling denominator at index {index}: {value:e}")]
    NonPositiveDenominator { index: usize, value: f64 },

    #[error("inconsistent solver state: constraint residual {residual:e}")]
    InconsistentState { residual: f64 },

    #[error("objective diverged at iteration {iteration}")]
    Divergence { iteration: usize, trace: Vec<f64> },

    #[error("support violation at ({i}, {j}): reference has mass where the model has none")]
    SupportViolation { i: usize, j: usize },

    #[error("plan not generated by symmetric hollow cost (cycle violation {violation:e})")]
    NotSymmetricGenerated { violation: f64 },

    #[error("metric projection did not converge after {cycles} cycles (worst violation {violation:e})")]
    ProjectionNotConverged { cycles: usize, violation: f64 },

    #[error("instance generation failed after {attempts} attempts: {source}")]
    GenerationFailed {
        attempts: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical failures of a solver, false for bad inputs.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::SinkhornNotConverged { .. }
            | Error::RootNotFound { .. }
            | Error::NonPositiveDenominator { .. }
            | Error::InconsistentState { .. }
            | Error::Divergence { .. }
            | Error::ProjectionNotConverged { .. }
            | Error::KernelOverflow { .. }
            | Error::NonFiniteCost { .. } => true,
            Error::GenerationFailed { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
