use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {what} = {index} (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("{divergence}: argument {value} outside domain {domain}")]
    Domain {
        divergence: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("support violation at index {index}: P = {p} but Q = 0")]
    Support { index: usize, p: f64 },

    #[error("conjugate domain violated at (s={s}, a={a}, g={g}) with residual {residual}: {source}")]
    ConjugateDomain {
        s: usize,
        a: usize,
        g: usize,
        residual: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("no goal-entering transitions")]
    NoGoalTransitions,

    #[error("instance too large for exhaustive enumeration: {0} policies")]
    TooLarge(u128),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
