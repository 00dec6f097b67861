use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("score {0} out of range")]
    ScoreOutOfRange(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid attribute set: {0}")]
    InvalidAttributes(String),
    #[error("attribute {0:?} has no candidates")]
    MissingAttribute(String),
    #[error("attribute {0:?} is not part of the attribute set")]
    UnknownAttribute(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("truncated ranking: only {available} candidates for n = {requested}")]
    Truncated { available: usize, requested: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
