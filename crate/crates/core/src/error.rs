use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error(
        "no statistics for group (source {source_id}, destination {destination_id}, slot {slot})"
    )]
    GroupNotFound {
        source_id: String,
        destination_id: String,
        slot: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stream error: {0}")]
    Stream(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::NotFound(_) => "not_found",
            Error::GroupNotFound { .. } => "group_not_found",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Index { .. } => "index",
            Error::Contract(_) => "contract",
            Error::Stream(_) => "stream",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn parse(err: &serde_json::Error, line_offset: usize) -> Self {
        Error::Parse {
            line: err.line() + line_offset,
            message: err.to_string(),
        }
    }
}
