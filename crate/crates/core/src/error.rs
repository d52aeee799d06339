use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// An action with positive target exposure has zero logging exposure.
    #[error("full-support violation: {0}")]
    FullSupport(String),

    #[error("enumeration bound exceeded: {size} items > bound {bound}")]
    EnumerationBound { size: usize, bound: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invariant violated in trajectory {traj}: {message}")]
    Invariant { traj: String, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
