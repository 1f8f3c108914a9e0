use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("non-finite value produced by {op}{}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        context: Option<String>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iter}: {details}")]
    Diverged { iter: usize, details: String },

    #[error("unsupported distribution kind for this operation: {0}")]
    UnsupportedDistribution(String),

    #[error("checkpoint parse error at line {line}: {details}")]
    CheckpointParse { line: usize, details: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
