use thiserror::Error;

/// Coarse failure category, used by callers to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: parameters, schedules, file contents.
    Validation,
    /// The computation itself failed: singular matrix, instability, divergence.
    Numerical,
    /// Filesystem trouble.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("explicit step {dt} s exceeds stability limit {limit} s")]
    Unstable { dt: f64, limit: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("{path}:{row}: {message}")]
    Format {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParams(_)
            | Error::InvalidSchedule(_)
            | Error::DimensionMismatch(_)
            | Error::NonFinite(_)
            | Error::MissingData(_)
            | Error::Format { .. } => ErrorKind::Validation,
            Error::Singular(_) | Error::Unstable { .. } | Error::Solver(_) => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
