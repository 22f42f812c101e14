use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("domain rejected: {0}")]
    Domain(String),

    #[error("{what} did not converge after {iterations} iterations (best value {best:.6e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        best: f64,
    },

    #[error("eigensolver stopped after {} iterations with residual {:.3e}", .0.iterations, .0.residual)]
    Eigen(Box<crate::spectral::EigenResult>),

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}
