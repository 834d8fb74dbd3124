use thiserror::Error;

/// Errors raised by stream parsing, oracle replay, and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unsupported operation `{0}`")]
    UnsupportedOp(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("sampling distribution is undefined for an all-zero vector")]
    UndefinedDistribution,

    #[error("entropy is undefined for an all-zero vector")]
    UndefinedEntropy,

    #[error("stream semantics violated: {0}")]
    Semantic(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("promise violated: {0}")]
    PromiseViolated(String),

    #[error("corrupt sketch blob: {0}")]
    Blob(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
