use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad category of a failure, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid flags, hyperparameters or decode settings.
    Config,
    /// Malformed or inconsistent input data.
    Data,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("load error at {key}: {reason}")]
    Load { key: String, reason: String },

    #[error("empty generation: hypothesis holds only the start token")]
    EmptyGeneration,

    #[error("decode error: {0}")]
    Decode(String),

    #[error("path error: {0}")]
    Path(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("search space too large for exhaustive decoding: |V|={vocab}, max_len={max_len} (~{estimate} sequences)")]
    SearchSpace {
        vocab: usize,
        max_len: usize,
        estimate: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Path(_) | Error::SearchSpace { .. } => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
