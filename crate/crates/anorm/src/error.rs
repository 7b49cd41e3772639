//! Error type shared across the crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mode index {mode} for an order-{order} array (modes are 1..={order})")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index error: {0}")]
    InvalidIndex(String),

    #[error("matrix is not positive definite (pivot {pivot} is {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("rank-deficient scatter matrix in mode {mode}")]
    RankDeficient { mode: usize },

    #[error("eigen iteration did not converge after {sweeps} sweeps")]
    EigenConvergence { sweeps: usize },

    #[error("invalid degrees of freedom {nu} for dimension {dim} (need nu > dim - 1)")]
    InvalidDof { nu: f64, dim: usize },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("dense covariance of {size} elements exceeds the cap of {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("trace has zero variance")]
    ZeroVariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("sampler failed at iteration {iter}: {source}")]
    SamplerStep {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
