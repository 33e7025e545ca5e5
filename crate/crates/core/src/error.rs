use std::path::PathBuf;

/// Errors raised by the simulator and its solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or incomplete scenario/system configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// Input data failed a structural check (PSD, unit diagonal, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    /// A failure inside an alternating-optimization run, tagged with the outer iteration.
    #[error("alternating optimization failed at iteration {iteration}: {source}")]
    Subproblem {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
