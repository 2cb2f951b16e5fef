use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular system: zero pivot at index {pivot}")]
    Singular { pivot: usize, sample_count: Option<usize> },

    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    #[error("value function undefined: {0}")]
    SingularValueFunction(String),

    #[error("resonance: {0}")]
    Resonance(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cell exceeded its wall-clock budget of {budget_ms} ms")]
    Timeout { budget_ms: u64 },

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Divergence { .. } | Error::InsufficientData(_)
        )
    }

    /// Attaches a window count to singular-system errors.
    pub(crate) fn with_sample_count(self, count: usize) -> Self {
        match self {
            Error::Singular { pivot, .. } => Error::Singular {
                pivot,
                sample_count: Some(count),
            },
            other => other,
        }
    }
}
