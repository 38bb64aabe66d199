use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure in {what}: last estimates {previous:e} and {last:e}")]
    NumericalFailure {
        what: String,
        previous: f64,
        last: f64,
    },

    #[error("tail condition never satisfied up to q = {q_max}")]
    TailViolation { q_max: f64 },

    #[error("chain structure error: {0}")]
    Structure(String),

    #[error("chains are not comparable: {0}")]
    Incomparable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step size too large: |drift| * dt = {excursion} exceeds interval width {width}")]
    StepSize { excursion: f64, width: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate family: {0}")]
    DegenerateFamily(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used when errors are serialised into reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RejectedInput(_) => "rejected_input",
            Error::Domain(_) => "domain",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::TailViolation { .. } => "tail_violation",
            Error::Structure(_) => "structure",
            Error::Incomparable(_) => "incomparable",
            Error::InsufficientData(_) => "insufficient_data",
            Error::StepSize { .. } => "step_size",
            Error::Configuration(_) => "configuration",
            Error::DegenerateFamily(_) => "degenerate_family",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
