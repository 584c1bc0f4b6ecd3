use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    Shape { name: String, expected: (usize, usize), got: (usize, usize) },

    #[error("non-finite values in `{0}`")]
    NonFinite(String),

    #[error("degenerate label vocabulary: no label distinct from `{0}`")]
    DegenerateVocabulary(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("incompatible parameter manifest: {0}")]
    Manifest(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("sequence step {step}: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
