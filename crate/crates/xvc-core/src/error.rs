//! Error types shared across the crate.
//!
//! Two failure classes are distinguished everywhere: *contract violations*
//! (the caller handed us something structurally wrong — bad shapes, invalid
//! axes, count mismatches) and *domain errors* (the values themselves are
//! outside an operation's domain — division by zero, log of a non-positive
//! number, an empty mask).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: contract violation: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }

    pub fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { op, msg: msg.into() }
    }

    /// True for structural misuse (shape mismatch included).
    pub fn is_contract(&self) -> bool {
        matches!(self, Error::Contract { .. } | Error::ShapeMismatch { .. })
    }

    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
