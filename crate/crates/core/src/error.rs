use thiserror::Error;

/// Errors raised by the simulation, estimation and optimization layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("invalid detector layout: {0}")]
    InvalidLayout(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid process parameters: {0}")]
    InvalidProcess(String),
    #[error("point {0:?} is not in the interior of the domain")]
    InvalidInterior([f64; 2]),
    #[error("path budget exceeded after {0} steps")]
    PathBudgetExceeded(u64),
    #[error("quadrature failed to converge: {0}")]
    QuadratureFailed(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot merge bundles with different provenance ({0} vs {1})")]
    MixedProvenance(String, String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("descent step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },
    #[error("plan `{plan}`: {source}")]
    InPlan { plan: String, source: Box<Error> },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Strips step/plan context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::InPlan { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
