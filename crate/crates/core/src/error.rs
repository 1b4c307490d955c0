use crate::grid::Axis;

/// Errors produced by the library and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("range [{start}, {end}) out of bounds for axis {axis} with extent {extent}")]
    Range { axis: Axis, start: usize, end: usize, extent: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected {expected} {what}, got {got}")]
    Arity { what: &'static str, expected: usize, got: usize },
    #[error("invalid value: {0}")]
    Value(String),
    #[error("column {column} is not a permutation: {detail}")]
    Permutation { column: usize, detail: String },
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("infeasible phantom spec: {0}")]
    Spec(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn value(msg: impl Into<String>) -> Self {
        Error::Value(msg.into())
    }
}
