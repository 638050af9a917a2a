use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subdivision: {0}")]
    InvalidGrid(String),

    #[error("{what} = {value} is outside its domain {domain}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("requested {requested} grid points, above the configured cap of {cap}")]
    MemoryCap { requested: usize, cap: usize },

    #[error("kernel evaluation failed at (t={t}, s={s}): {reason}")]
    Kernel { t: f64, s: f64, reason: String },

    #[error("conditional expectation oracle failed on interval ({from}, {to}]: {reason}")]
    Oracle { from: f64, to: f64, reason: String },

    #[error("path {index} failed: {source}")]
    PathFailure {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, domain: impl Into<String>) -> Self {
        Error::OutOfDomain {
            what,
            value,
            domain: domain.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::InvalidGrid(_)
            | Error::OutOfDomain { .. }
            | Error::GridMismatch(_)
            | Error::MemoryCap { .. }
            | Error::MissingInput(_)
            | Error::InvalidArgument(_)
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::PathFailure { source, .. } => source.is_usage(),
            Error::Kernel { .. } | Error::Oracle { .. } | Error::Numeric(_) | Error::Io(_) => false,
        }
    }
}
