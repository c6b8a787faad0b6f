use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite: eigenvalue {value:.3e} below tolerance {tolerance:.3e}")]
    NotPsd { value: f64, tolerance: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal {off_norm:.3e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("spectrum has {found} nonzero eigenvalues, need at least {needed}")]
    TooFewEigenvalues { found: usize, needed: usize },

    #[error("node resampling budget exhausted after {attempts} draws; best weight mass {best_mass:.4} exceeds {limit:.4}")]
    ResampleExhausted {
        attempts: usize,
        best_mass: f64,
        limit: f64,
    },

    #[error("all {restarts} optimization restarts diverged")]
    Diverged { restarts: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
