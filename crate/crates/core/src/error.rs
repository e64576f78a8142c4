use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("svec length {len} is not a triangular number")]
    NotTriangular { len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("closed loop is not stable (spectral radius {rho})")]
    Unstable { rho: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reference solver failed: {reason}")]
    Solver {
        reason: String,
        certificate: Box<crate::oracle::Certificate>,
    },

    #[error("closed-loop state blew up at step {step}: |x| = {norm:e}")]
    Blowup { step: u64, norm: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
