use serde::Serialize;

/// Every fallible operation in the crate returns this error.
///
/// Each variant maps to a stable machine-readable code (see [`Error::code`])
/// used by the CLI error JSON and the C ABI status values.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend does not support this model: {0}")]
    BackendMismatch(String),
    #[error("dense size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("quadrature did not reach tolerance: estimate {estimate:.3e} > requested {requested:.3e}")]
    Quadrature { estimate: f64, requested: f64 },
    #[error("cubic has complex roots at theta={theta} (gamma > 1 regime)")]
    ComplexRoots { theta: f64 },
    #[error("degenerate spectral coefficients: {0}")]
    Degenerate(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("lag {lag} exceeds trajectory horizon {horizon}")]
    LagExceedsHorizon { lag: f64, horizon: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("tolerance exceeded: {0}")]
    Tolerance(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::BackendMismatch(_) => "backend_mismatch",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::Quadrature { .. } => "quadrature_failure",
            Error::ComplexRoots { .. } => "complex_roots",
            Error::Degenerate(_) => "degenerate",
            Error::Singular(_) => "singular_system",
            Error::EmptyEnsemble => "empty_ensemble",
            Error::LagExceedsHorizon { .. } => "lag_exceeds_horizon",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
            Error::Tolerance(_) => "tolerance_exceeded",
        }
    }

    /// The JSON object written to stderr by the CLI.
    pub fn to_report(&self, context: serde_json::Value) -> ErrorReport {
        ErrorReport { code: self.code().to_string(), message: self.to_string(), context }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub code: String,
    pub message: String,
    pub context: serde_json::Value,
}

pub type Result<T> = std::result::Result<T, Error>;
