use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("value {value} at index {index} is outside [0, 1]{}", context_suffix(.context))]
    Domain {
        index: usize,
        value: f64,
        context: String,
    },

    #[error("step {step} outside valid range {min}..={max}")]
    Step { step: usize, min: usize, max: usize },

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration mismatch on `{key}`: expected {expected}, found {found}")]
    ConfigMismatch {
        key: String,
        expected: String,
        found: String,
    },

    #[error("video `{video}`: {message}")]
    Data { video: String, message: String },

    #[error("invalid shot partition: {0}")]
    Partition(String),

    #[error("checkpoint {}: {message}", .path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            what: what.into(),
            expected,
            found,
        }
    }

    pub(crate) fn data(video: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            video: video.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Numeric(_) | Error::Io { .. } | Error::Checkpoint { .. }
        )
    }
}
