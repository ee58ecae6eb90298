use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RhmError>;

#[derive(Debug, Error)]
pub enum RhmError {
    /// A hyperparameter or argument violates a documented constraint.
    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),

    #[error("level {level} out of range 1..={depth}")]
    InvalidLevel { level: usize, depth: usize },

    #[error("{what} {value} out of range {range}")]
    OutOfRange {
        what: &'static str,
        value: u64,
        range: String,
    },

    /// Enumeration would exceed the configured cap.
    #[error("resource cap exceeded: {required} items required, cap is {cap}")]
    CapExceeded { required: String, cap: u64 },

    /// Exact value does not fit in 64 bits; carries the decimal expansion.
    #[error("overflow: exact value is {0}")]
    Overflow(String),

    #[error("context is not generated by any derivation")]
    IncompatibleContext,

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u64, vocab: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("alphabet has more than {cap} distinct characters")]
    AlphabetOverflow { cap: usize },

    #[error("insufficient points for fit: {found} usable, need at least 3")]
    InsufficientPoints { found: usize },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl RhmError {
    pub(crate) fn constraint(msg: impl Into<String>) -> Self {
        RhmError::Constraint(msg.into())
    }

    /// Process exit status for this error (2 usage, 3 constraint, 4 I/O, 5 cap).
    pub fn exit_code(&self) -> i32 {
        match self {
            RhmError::Io(_) => 4,
            RhmError::CapExceeded { .. } => 5,
            RhmError::Parse(_) | RhmError::Json(_) | RhmError::Csv(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            RhmError::Constraint(_) => "constraint",
            RhmError::InvalidGrammar(_) => "invalid_grammar",
            RhmError::InvalidLevel { .. } => "invalid_level",
            RhmError::OutOfRange { .. } => "out_of_range",
            RhmError::CapExceeded { .. } => "cap_exceeded",
            RhmError::Overflow(_) => "overflow",
            RhmError::IncompatibleContext => "incompatible_context",
            RhmError::TokenOutOfRange { .. } => "token_out_of_range",
            RhmError::EmptyInput(_) => "empty_input",
            RhmError::AlphabetOverflow { .. } => "alphabet_overflow",
            RhmError::InsufficientPoints { .. } => "insufficient_points",
            RhmError::Io(_) => "io",
            RhmError::Json(_) => "json",
            RhmError::Csv(_) => "csv",
            RhmError::Parse(_) => "parse",
        }
    }
}
