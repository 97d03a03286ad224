use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid run configuration (unknown ids, incompatible dimensions, bad values).
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// An operation invoked out of order (stepping a finished episode, bonus before counting).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A loss, gradient or parameter became non-finite.
    #[error("numerical divergence{}: {what}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numerical { step: Option<usize>, what: String },
    /// Both samples of a two-sample test have zero variance.
    #[error("degenerate samples: both have zero variance")]
    DegenerateSample,
}

impl Error {
    pub(crate) fn numerical(what: impl Into<String>) -> Self {
        Error::Numerical { step: None, what: what.into() }
    }

    /// Attach the environment step at which a numerical error surfaced.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Numerical { step: None, what } => Error::Numerical { step: Some(step), what },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
