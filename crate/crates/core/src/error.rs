use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's algebraic rule.
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward output contained NaN or infinity.
    #[error("{op}: non-finite value in forward output")]
    NonFinite { op: &'static str },

    /// Training diverged (loss became NaN or infinite).
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A checkpoint file is damaged or inconsistent with its manifest.
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged(_))
    }

    /// True for errors caused by invalid user-supplied data or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Config(_) | Error::Usage(_) | Error::Shape { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
