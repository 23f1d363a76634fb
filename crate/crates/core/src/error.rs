use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file's header or structure does not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// The payload is shorter or longer than the header declares.
    #[error("length error: expected {expected} values, found {found}")]
    Length { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported estimate: {0}")]
    UnsupportedEstimate(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("no results to emit")]
    EmptyResults,

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by unreadable or malformed input files, as
    /// opposed to inconsistent arguments.
    pub fn is_io_class(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format(_) | Error::Length { .. } | Error::Json(_))
    }
}
