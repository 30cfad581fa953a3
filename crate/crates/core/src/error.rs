use plp_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Located parse failure. Every parser returns either a fully valid value
/// or one of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("index {index}: {msg}")]
    Index { index: usize, msg: String },
    #[error("line {line}, field `{field}`: {msg}")]
    Field {
        line: usize,
        field: String,
        msg: String,
    },
}

impl ParseError {
    pub fn line(line: usize, msg: impl Into<String>) -> Self {
        ParseError::Line {
            line,
            msg: msg.into(),
        }
    }

    pub fn field(line: usize, field: impl Into<String>, msg: impl Into<String>) -> Self {
        ParseError::Field {
            line,
            field: field.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("invalid residue {ch:?} at position {position}")]
    Alphabet { ch: char, position: usize },
    #[error("embedding file format error in `{field}`: {reason}")]
    Format { field: &'static str, reason: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("tokenizer error: {0}")]
    Tokenizer(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by NaN/Inf in model arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Tensor(TensorError::NonFinite { .. }) | Error::Numeric(_))
    }
}
