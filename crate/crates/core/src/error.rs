use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {detail}")]
    Dimension { context: String, detail: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("load: {0}")]
    Load(String),

    #[error("structure: {0}")]
    Structure(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Stable machine-readable class, used by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Usage(_) => "usage",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Load(_) => "schema",
            Error::Structure(_) => "structure",
            Error::Sampling(_) => "sampling",
            Error::Diverged(_) => "diverged",
            Error::Vocabulary(_) => "vocabulary",
            Error::Io(_) => "io",
            Error::Json(_) => "schema",
        }
    }
}
