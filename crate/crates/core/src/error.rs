use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} is not valid for the {family} loss")]
    InvalidLabel { label: f64, family: &'static str },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing annotation: {0}")]
    MissingAnnotation(&'static str),

    #[error("{kind} {id} has no samples")]
    EmptyPartition { kind: &'static str, id: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inner training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
