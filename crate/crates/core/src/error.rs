use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("channel configuration: {0}")]
    ChannelConfig(String),

    #[error("problem too large: {0}")]
    SizeGuard(String),

    #[error("division by a zero channel gain at ({row}, {col})")]
    ZeroGain { row: usize, col: usize },

    #[error("ill-conditioned system: condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
}

impl Error {
    pub(crate) fn dim(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True when a numerical guard (size, conditioning, zero gain) refused the work.
    pub fn is_numerical_guard(&self) -> bool {
        match self {
            Error::SizeGuard(_) | Error::ZeroGain { .. } | Error::IllConditioned { .. } => true,
            Error::Context { source, .. } => source.is_numerical_guard(),
            _ => false,
        }
    }

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
