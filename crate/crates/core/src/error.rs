use alloc::string::String;
use core::fmt;

use crate::rewards::Scheme;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Alphabet smaller than two symbols.
    AlphabetTooSmall(usize),
    InvalidTaskSpec(String),
    TokenOutOfRange { token: u32, vocab: usize },
    /// A QA pair carried a reserved token or an empty answer.
    InvalidPair(String),
    LengthMismatch { expected: usize, found: usize },
    DimensionMismatch { expected: usize, found: usize },
    MissingBaseline(Scheme),
    GroupTooSmall(usize),
    EnumerationBound { events: u128, limit: u128 },
    InvalidConfig(String),
    UnknownScheme(String),
    EmptyDataset,
    EmptyBatch,
    /// A NaN or infinity reached a gradient, objective or parameter.
    NonFinite { step: u64, context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::AlphabetTooSmall(n) => write!(f, "alphabet size must be at least 2, got {n}"),
            Error::InvalidTaskSpec(msg) => write!(f, "invalid task spec: {msg}"),
            Error::TokenOutOfRange { token, vocab } => {
                write!(f, "token id {token} out of range for vocabulary of size {vocab}")
            }
            Error::InvalidPair(msg) => write!(f, "invalid QA pair: {msg}"),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::MissingBaseline(s) => write!(f, "scheme {s} requires baseline probabilities"),
            Error::GroupTooSmall(k) => write!(f, "advantage group needs at least 2 rewards, got {k}"),
            Error::EnumerationBound { events, limit } => {
                write!(f, "enumeration needs {events} trace events, limit is {limit}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::UnknownScheme(s) => write!(
                f,
                "unknown scheme {s:?} (expected one of logp, p, gm, am, ws_inv, ws_neglog)"
            ),
            Error::EmptyDataset => f.write_str("dataset is empty"),
            Error::EmptyBatch => f.write_str("batch is empty"),
            Error::NonFinite { step, context } => {
                write!(f, "non-finite value at step {step}: {context}")
            }
        }
    }
}

impl core::error::Error for Error {}
