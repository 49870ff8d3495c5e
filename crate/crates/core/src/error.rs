use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular Helmholtz system at wavenumber {kappa}")]
    SingularSystem { kappa: f64 },

    #[error("precision operator is not positive definite (smallest diagonal pivot {min_pivot:e})")]
    IndefinitePrecision { min_pivot: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("quadrature refinement did not converge (last two estimates {previous:e}, {current:e})")]
    QuadratureNotConverged { previous: f64, current: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("solver failed at frequency index {index} (wavenumber {kappa}): {source}")]
    Frequency {
        index: usize,
        kappa: f64,
        /// Records of the frequencies that finished before the failure.
        completed: Vec<crate::sequential::FrequencyRecord>,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
