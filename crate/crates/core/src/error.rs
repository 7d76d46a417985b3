use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate embedding: {0}")]
    Degenerate(String),

    #[error("non-finite value in {component}")]
    NonFinite { component: String },

    #[error("anchor has no positives")]
    NoPositives,

    #[error("no valid anchors in batch")]
    NoValidAnchors,

    #[error("AUROC undefined: {0}")]
    AurocUndefined(String),

    #[error("no foreground in mask")]
    NoForeground,

    #[error("manifest has {} problem(s): {}", .0.len(), .0.join("; "))]
    Manifest(Vec<String>),

    #[error("integrity error in section `{section}`: {detail}")]
    Integrity { section: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
