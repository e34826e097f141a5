//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// The CLI maps these onto its exit-code taxonomy: `Usage` → 2,
/// `Io`/`Data` → 3, `Numerical` → 4.
#[derive(Debug)]
pub enum Error {
    /// Tensor op called with incompatible shapes.
    Shape {
        op: &'static str,
        detail: String,
    },
    /// Invalid argument or configuration detected before any work started.
    Usage(String),
    /// Missing or malformed data (packs, checkpoints, plans).
    Data(String),
    /// A numerical procedure failed (divergence, NaN, non-convergence).
    Numerical(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in `{op}`: {detail}"),
            Error::Usage(msg) => write!(f, "invalid argument: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
