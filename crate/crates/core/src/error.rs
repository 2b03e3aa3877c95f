use thiserror::Error;

/// Errors produced by the foliation library.
#[derive(Debug, Error)]
pub enum IsfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigenbasis is ill-conditioned (condition number {cond:.3e} exceeds {limit:.1e}); the linear part is defective or nearly so")]
    IllConditionedEigenbasis { cond: f64, limit: f64 },

    #[error("spectrum is not contracting: {0}")]
    NotContracting(String),

    #[error("exact resonance in component {j} at exponent {m:?} (divisor magnitude {divisor:.3e})")]
    Resonance { j: usize, m: Vec<u32>, divisor: f64 },

    #[error("inconsistent conjugate pairing: {0}")]
    Pairing(String),

    #[error("rank-deficient regression: {0}")]
    RankDeficient(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IsfError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(IsfError::InvalidArgument(msg.into()))
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(IsfError::DimensionMismatch { expected, got });
    }
    Ok(())
}
