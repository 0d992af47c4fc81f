use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what} at step {step}{}", path.map(|p| format!(" of path {p}")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        step: usize,
        path: Option<usize>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("decorrelation window W = {window} must be smaller than the orbit length L = {orbit_len}")]
    WindowTooLarge { window: usize, orbit_len: usize },

    #[error("corrections unavailable: {0}")]
    CorrectionsUnavailable(&'static str),

    #[error("noise model has no score; the derivative is undefined for deterministic dynamics")]
    DegenerateNoise,

    #[error("the ergodic estimator requires a time-homogeneous system")]
    TimeInhomogeneous,

    #[error("AR(1) coefficient |a| = {0} must be < 1 for a stationary law to exist")]
    NotContracting(f64),

    #[error("correlation decay rate theta = {0} must lie in (0, 1)")]
    InvalidTheta(f64),

    #[error("power iteration did not converge after {iterations} iterations (last L1 change {change:e}); the grid is too coarse for this noise scale")]
    NotConverged { iterations: usize, change: f64 },

    #[error("only {batches} batches available, at least {required} are needed; use a longer run or shorter batches")]
    TooFewBatches { batches: usize, required: usize },

    #[error("at gamma = {gamma}: {source}")]
    AtGamma {
        gamma: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_gamma(self, gamma: f64) -> Self {
        Error::AtGamma {
            gamma,
            source: Box::new(self),
        }
    }

    pub(crate) fn with_path(self, path: usize) -> Self {
        match self {
            Error::NonFinite { what, step, .. } => Error::NonFinite {
                what,
                step,
                path: Some(path),
            },
            other => other,
        }
    }
}
