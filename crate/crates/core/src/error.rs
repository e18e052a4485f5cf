use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An input lies outside the domain an operation accepts.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A computation produced a non-finite value or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Components were combined in a way that cannot produce a correct result,
    /// e.g. a quadrature rule whose weight exponent does not match the integrand.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// The requested combination is outside what the library implements.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Cholesky factorization failed even at the largest jitter.
    #[error("matrix is not positive definite at leading minor {minor} (jitter {jitter:e})")]
    Factorization { minor: usize, jitter: f64 },

    /// The optimizer could not continue.
    #[error("optimizer failure: {message} at x = {snapshot:?}")]
    Optimizer { message: String, snapshot: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
