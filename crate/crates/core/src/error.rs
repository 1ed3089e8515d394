use std::fmt;
use std::io;

use thiserror::Error;

/// A single failed invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    pub(crate) fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self { field, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {}", join(.violations))]
    Invalid { what: &'static str, violations: Vec<Violation> },

    #[error("layer `{layer}`: {message}")]
    Layer { layer: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("batch size {batch} exceeds reuse_fac {reuse_fac}: the batch size must be <= reuse_fac")]
    BatchTooLarge { batch: usize, reuse_fac: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("weights: {0}")]
    Weights(#[from] WeightError),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn layer(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Layer { layer: layer.into(), message: message.into() }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Weights(WeightError::ShortRead { .. }))
    }
}

/// Failures while decoding a weight store, kept distinct per cause.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("bad magic {found:?}, expected \"SCNN\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("short read at byte {offset} while reading {what}")]
    ShortRead { offset: usize, what: &'static str },
    #[error("layer `{layer}`: record `{record}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { layer: String, record: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("layer `{layer}`: missing record `{record}`")]
    Missing { layer: String, record: String },
    #[error("record `{0}`: name is not valid UTF-8")]
    BadName(String),
    #[error("duplicate record `{0}`")]
    Duplicate(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
