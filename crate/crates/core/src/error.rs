use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent hyperparameters or shapes.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed caller input (out-of-range labels, mismatched dimensions, bad indices).
    #[error("input error: {0}")]
    Input(String),
    /// A caller broke an operation's protocol, e.g. committing an element twice.
    #[error("logic error: {0}")]
    Logic(String),
    #[error("numeric divergence: {0}")]
    Numeric(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    /// Exhaustive enumeration refused because the search space is too large.
    #[error("size error: {0}")]
    Size(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
