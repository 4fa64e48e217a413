use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("point ({}, {}, {}) lies outside the domain", .0[0], .0[1], .0[2])]
    Domain([f64; 3]),

    #[error("shape mismatch: expected {expected} entries, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("power iteration did not converge after {iterations} iterations (estimate {estimate})")]
    PowerIteration { iterations: usize, estimate: f64 },

    #[error("step {step} failed: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: u64) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
