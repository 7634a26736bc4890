use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps [`Error::exit_code`] onto process exit codes, so new
/// variants must be classified there as well.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported request: {0}")]
    Capability(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("trajectory generation failed at trajectory {trajectory}, step {step}: {reason}")]
    Generation {
        trajectory: usize,
        step: usize,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("study failed: {failed} of {total} replications errored")]
    StudyFailed { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// 1 for anything the caller can fix by changing inputs, 2 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Capability(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => 1,
            Error::Convergence { .. } | Error::Generation { .. } | Error::Numerical(_) | Error::StudyFailed { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
