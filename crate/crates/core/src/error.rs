use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical degeneracies that a caller can reasonably react to (particle
/// collapse, all-zero backward weights) get their own variants; structural
/// misuse (dimension mismatches, empty containers, invalid configuration) is
/// reported as validation errors with a human-readable description.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Every particle weight at step `t` is zero in the linear domain.
    #[error("particle collapse at step {t}: all forward weights are -inf")]
    ParticleCollapse { t: usize },

    /// Every truncated backward weight at step `t` is zero in the linear
    /// domain, so no ancestor or backward index can be drawn.
    #[error("degenerate backward weights at step {t}: all -inf")]
    DegenerateBackwardWeights { t: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
