use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: context {context}, arm {arm}")]
    Index { context: usize, arm: usize },

    #[error("support violation at context {context}, arm {arm}: {reason}")]
    Support {
        context: usize,
        arm: usize,
        reason: String,
    },

    #[error("zero sampling density at context {context}, arm {arm}")]
    ZeroDensity { context: usize, arm: usize },

    #[error("invalid bandit spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("pair has no preference label")]
    MissingPreference,

    #[error("leave-one-out estimator needs at least 2 samples, got {0}")]
    Arity(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
