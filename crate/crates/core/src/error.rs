use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MoteError>;

#[derive(Debug, Error)]
pub enum MoteError {
    #[error("shape mismatch: {left} is {left_shape:?} but {right} is {right_shape:?}")]
    ShapeMismatch {
        left: &'static str,
        left_shape: (usize, usize),
        right: &'static str,
        right_shape: (usize, usize),
    },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("document {id}: timestamp {timestamp} outside [{lo}, {hi})")]
    TimestampOutOfRange {
        id: String,
        timestamp: i64,
        lo: i64,
        hi: i64,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<MoteError>,
    },
}

impl MoteError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        MoteError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        MoteError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Wraps an error with the stage that produced it.
    pub fn in_stage(self, context: impl Into<String>) -> Self {
        MoteError::Stage {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config(&self) -> bool {
        match self {
            MoteError::Config { .. } => true,
            MoteError::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
