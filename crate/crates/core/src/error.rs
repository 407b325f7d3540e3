use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered at parameter index {index}")]
    NonFinite { index: usize },

    #[error("parameter count {p} exceeds Hessian cap {cap}")]
    HessianCapExceeded { p: usize, cap: usize },

    #[error("matrix is not symmetric (max asymmetry {asym:.3e})")]
    NotSymmetric { asym: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("output-layer neuron cannot be duplicated")]
    OutputLayerNeuron,

    #[error("projected gamma undefined: original output weight is zero")]
    ZeroBaseOutputWeight,

    #[error("degenerate smallest eigenvalue (gap {gap:.3e} < 1e-12)")]
    DegenerateEigenpair { gap: f64 },

    #[error("base point is not critical (grad L-inf {grad_linf:.3e})")]
    NotCritical { grad_linf: f64 },

    #[error("inverse reparameterization undefined at epsilon = 0")]
    InverseAtZeroEps,

    #[error("step size underflow (h = {h:.3e}): integration too stiff")]
    Stiffness { h: f64 },

    #[error("optimizer diverged: loss became non-finite")]
    Diverged,

    #[error("zero variance: cannot zscore a constant series")]
    ZeroVariance,

    #[error("Cholesky factorization failed after jitter escalation to {max_jitter:.1e}")]
    CholeskyFailed { max_jitter: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
