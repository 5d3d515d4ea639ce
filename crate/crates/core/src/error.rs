use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("index out of range: axis {axis} index {index} >= {size}")]
    Index { axis: usize, index: usize, size: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("penalty out of domain: {0}")]
    PenaltyDomain(String),

    #[error("empty data")]
    EmptyData,

    #[error("degenerate fit: reduced system has eigenvalue {eigenvalue:e} (largest {largest:e})")]
    DegenerateFit { eigenvalue: f64, largest: f64 },

    #[error("iteration did not converge after {iterations} steps (last squared increment {last_increment:e})")]
    NonConvergence { iterations: usize, last_increment: f64 },

    #[error("criterion undefined: {0}")]
    UndefinedCriterion(String),

    #[error("selection failed: every lattice cell is invalid")]
    SelectionFailed,

    #[error("bandwidth calibration failed: {0}")]
    Calibration(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable short name used in machine-readable error records and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Index { .. } => "index",
            Error::InvalidInput(_) => "invalid_input",
            Error::Dimension(_) => "dimension",
            Error::PenaltyDomain(_) => "penalty_domain",
            Error::EmptyData => "empty_data",
            Error::DegenerateFit { .. } => "degenerate_fit",
            Error::NonConvergence { .. } => "non_convergence",
            Error::UndefinedCriterion(_) => "undefined_criterion",
            Error::SelectionFailed => "selection_failed",
            Error::Calibration(_) => "calibration",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
