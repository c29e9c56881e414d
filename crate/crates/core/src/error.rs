//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {expected} vs {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: non-finite value produced ({context})")]
    NonFinite { op: &'static str, context: String },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("missing file: {0}")]
    MissingFile(std::path::PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("sampler aborted at step {step}: {msg}")]
    SamplerAbort { step: usize, msg: String },

    #[error("training halted at step {step}: {msg}")]
    TrainingHalt { step: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
