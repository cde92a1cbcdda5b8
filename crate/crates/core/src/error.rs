use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Bad parameters for a model, rule, grid or run.
    #[error("configuration error: {0}")]
    Config(String),

    /// The step-size gates failed and no override was given.
    #[error("step size {dt} is not admissible: {reason}")]
    Admissibility { dt: f64, reason: String },

    /// A non-finite state appeared. With truncation active this is a bug.
    #[error("non-finite state produced at step {step}")]
    NonFinite { step: i64 },

    /// Caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }
}
