//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// A vector had the wrong length for the operation.
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A scalar loss or one of its terms left the finite range.
    /// `term` names the piece that diverged.
    NonFinite { term: &'static str, value: f64 },
    /// Cosine similarity is undefined for a zero-norm anchor.
    ZeroNormAnchor { index: usize },
    /// `step` was called on a finished episode.
    EpisodeDone,
    /// No registered environment under this family/name.
    UnknownVariant { family: String, name: String },
    InvalidArg(String),
    Io(std::io::Error),
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch {
                what,
                expected,
                got,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {got}"),
            Error::NonFinite { term, value } => {
                write!(f, "non-finite value in term `{term}`: {value}")
            }
            Error::ZeroNormAnchor { index } => {
                write!(f, "anchor {index} has zero norm; cosine is undefined")
            }
            Error::EpisodeDone => write!(f, "episode already finished; reset before stepping"),
            Error::UnknownVariant { family, name } => {
                write!(f, "unknown environment variant {family}/{name}")
            }
            Error::InvalidArg(msg) => write!(f, "invalid argument: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
