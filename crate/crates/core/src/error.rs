use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exponential chi-squared kernel requires nonnegative inputs, found {value} at row {row}, column {col}")]
    NegativeInput { row: usize, col: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("ill-conditioned coupling: reciprocal condition number of {matrix} is {rcond:e}, below the limit {limit:e}")]
    IllConditioned {
        matrix: &'static str,
        rcond: f64,
        limit: f64,
    },

    #[error("degenerate coding: {0}")]
    DegenerateCoding(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown identifier: {0}")]
    UnknownId(String),

    #[error("trial {trial} (seed {seed}): {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Numerical,
    Io,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::IllConditioned { .. }
            | Error::DegenerateCoding(_)
            | Error::Singular(_)
            | Error::NonFinite(_) => ErrorClass::Numerical,
            Error::Io { .. } => ErrorClass::Io,
            Error::Trial { source, .. } => source.class(),
            _ => ErrorClass::Usage,
        }
    }
}
