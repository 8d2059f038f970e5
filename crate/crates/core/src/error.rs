use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A ratio p/q was required where q has no mass but p does.
    #[error("support violation at index {index}: {detail}")]
    SupportViolation { index: usize, detail: String },

    #[error("internal numerical error: {0}")]
    Numerical(String),

    #[error("training failed at step {step}: {detail}")]
    TrainingFailure { step: usize, detail: String },

    #[error("stale forward cache (network changed since the forward pass)")]
    StaleCache,

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
