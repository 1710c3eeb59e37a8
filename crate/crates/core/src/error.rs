use thiserror::Error;

/// Errors produced anywhere in the signal chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("degenerate clustering: {0}")]
    DegenerateCluster(String),

    #[error("insufficient spikes: need at least {needed}, got {got}")]
    InsufficientSpikes { needed: usize, got: usize },

    /// Source extraction produced too few spikes to be a motor unit.
    #[error("source rejected: {0}")]
    SourceRejected(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("corrupted payload at byte {offset}: {message}")]
    Corruption { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
