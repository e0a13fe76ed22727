use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{what} did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NotConverged { what: &'static str, residual: f64, iterations: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Error {
        Error::Invalid(msg.into())
    }

    /// Numerical failures (non-convergence, blow-up) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotConverged { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
