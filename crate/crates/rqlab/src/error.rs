//! Crate-wide error type.

use thiserror::Error;

use crate::mdp::ValidationReport;

/// Errors produced by solvers, environments, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An MDP failed structural validation; the report lists every violation.
    #[error("model failed validation:\n{0}")]
    InvalidModel(ValidationReport),

    /// An index addressed a state or action outside the model.
    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// Two objects that must share a state/action space do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    /// `residual` is the last sup-norm change between successive iterates
    /// (for oscillating outer loops, the gap between the last two policies).
    #[error("{what} did not converge after {iterations} iterations (last sup-norm change {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// `step` was called on an episode that already terminated or truncated.
    #[error("cannot step a finished episode")]
    EpisodeFinished,

    /// Experiment configuration was syntactically valid JSON but semantically
    /// unusable.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
