use thiserror::Error;

/// Errors produced by the SPARC / VAMP library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for section {section} of size {size}")]
    IndexOutOfRange {
        section: usize,
        index: usize,
        size: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("state evolution breakdown at iteration {iteration}: {reason}")]
    SeBreakdown { iteration: usize, reason: String },

    #[error("degenerate divergence {value} at iteration {iteration}")]
    DegenerateDivergence { iteration: usize, value: f64 },

    #[error("decoder produced a non-finite iterate at iteration {0}")]
    DecoderNan(usize),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("allocation design failed: {0}")]
    Design(String),

    #[error("rate too close to capacity: {0}")]
    RateTooCloseToCapacity(String),

    #[error("spectrum mismatch between operator and state evolution: {0}")]
    SpectrumMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("infeasible size: estimated {estimate_mb:.1} MiB exceeds budget {budget_mb:.1} MiB")]
    Infeasible { estimate_mb: f64, budget_mb: f64 },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
