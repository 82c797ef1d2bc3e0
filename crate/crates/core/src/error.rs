use thiserror::Error;

pub type Result<T> = std::result::Result<T, GhmmError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GhmmError {
    #[error("every hidden state assigns zero probability to the observation")]
    AllZeroWeights,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("at observation index {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<GhmmError>,
    },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("non-stationary parameters (`{field}`): {reason}")]
    NonstationaryParameters { field: String, reason: String },
    #[error("invalid stochastic matrix: {0}")]
    InvalidStochasticMatrix(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("derivative order {requested} unsupported (max {max})")]
    UnsupportedOrder { requested: usize, max: usize },
    #[error("finite-difference step {step:e} below resolution {limit:e}")]
    StepTooSmall { step: f64, limit: f64 },
    #[error("enumeration of {size} sequences exceeds cap {cap}")]
    TooLarge { size: u128, cap: u128 },
    #[error("stream of length {len} too short (need more than {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("state space too large: {0}")]
    StateSpaceTooLarge(String),
    #[error("k-order embedding of size {size} exceeds cap {cap}")]
    SizeCap { size: u128, cap: u128 },
    #[error("covariance not positive semidefinite: {0}")]
    NonPsdCovariance(String),
    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiNoConvergence(usize),
    #[error("restricted fit log-likelihood {restricted} exceeds full fit {full}")]
    NestingViolation { full: f64, restricted: f64 },
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl GhmmError {
    pub fn at(self, index: usize) -> Self {
        GhmmError::AtIndex {
            index,
            source: Box::new(self),
        }
    }

    /// Strips index annotations.
    pub fn root(&self) -> &GhmmError {
        match self {
            GhmmError::AtIndex { source, .. } => source.root(),
            other => other,
        }
    }

    /// Field name for parameter validation errors, if any.
    pub fn field(&self) -> Option<&str> {
        match self.root() {
            GhmmError::InvalidParameter { field, .. } | GhmmError::NonstationaryParameters { field, .. } => Some(field),
            GhmmError::Config { path, .. } => Some(path),
            _ => None,
        }
    }

    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GhmmError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
