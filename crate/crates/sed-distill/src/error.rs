use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SedError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("bad input: {0}")]
    Input(String),

    #[error("training diverged: non-finite {component} at step {step}")]
    Divergence { component: String, step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SedError>;
