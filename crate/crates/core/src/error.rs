use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlError>;

#[derive(Debug, Error)]
pub enum FlError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("format error in {path}: expected magic {expected:#010x}, found {found:#010x}")]
    Format {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("I/O error: {path} truncated at byte offset {offset} (needed {needed} bytes)")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<FlError>,
    },
}

impl FlError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FlError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the communication round it occurred in.
    pub fn in_round(self, round: usize) -> Self {
        FlError::Round {
            round,
            source: Box::new(self),
        }
    }
}
