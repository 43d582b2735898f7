use std::fmt;
use std::io;

/// Failures surfaced by the captioning library.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not conform for the named operator.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A value fell outside an operator's domain (e.g. log of a non-positive number).
    Domain { op: &'static str, detail: String },
    /// A caller violated an operation's precondition.
    Contract(String),
    /// Training produced a non-finite value.
    NonFinite { step: usize, what: String },
    /// Malformed input file.
    Format { path: String, detail: String },
    Io(io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(path: impl fmt::Display, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            detail: detail.into(),
        }
    }

    /// True for failures caused by NaN/Inf during training.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            Error::Domain { op, detail } => write!(f, "{op}: domain error: {detail}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::NonFinite { step, what } => {
                write!(f, "non-finite value at step {step}: {what}")
            }
            Error::Format { path, detail } => write!(f, "{path}: {detail}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
