use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// File-level problem in a binary container (header, trailing bytes).
    #[error("format error: {0}")]
    Format(String),

    /// A single record inside a binary container is invalid or truncated.
    #[error("record {index}: {message}")]
    CorruptRecord { index: u64, message: String },

    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },

    #[error("no cached representation for query `{qid}`, passage `{pid}`")]
    CacheMiss { qid: String, pid: String },

    #[error("queries without relevance judgments: {}", .0.join(", "))]
    Unjudged(Vec<String>),

    #[error("empty input: {0}")]
    Empty(String),

    /// Input for which a quantity is undefined, such as the cosine of a zero
    /// vector.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the data a command was given, as opposed to
    /// failures inside the engine itself.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Shape { .. } | Error::NonFinite { .. })
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn corrupt(index: u64, message: impl Into<String>) -> Self {
        Error::CorruptRecord {
            index,
            message: message.into(),
        }
    }
}
