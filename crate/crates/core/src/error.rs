use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("generation index must be at least 1")]
    ZeroGeneration,

    #[error("sequence undefined at generation {k}: table holds {len} rows and has no continuation")]
    SequenceUndefined { k: usize, len: usize },

    /// `k == 0` refers to the limit quadruple.
    #[error("invalid parameters at generation {k}: {reason}")]
    InvalidParams { k: usize, reason: String },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("complex limit eigenvalues (discriminant {0})")]
    ComplexLimit(f64),

    #[error("degeneracy criterion undefined: theta equals b")]
    DegeneracyUndefined,

    #[error("scaling failure at index {0}")]
    ScalingFailure(usize),

    #[error("invalid index range k={k}, n={n}")]
    InvalidRange { k: usize, n: usize },

    #[error("approximant singular at j={0}")]
    Singular(usize),

    #[error("tail not converged for k={k} within nmax={nmax}")]
    TailNotConverged { k: usize, nmax: usize },

    #[error("excluded parameter set: {0}")]
    ExcludedParameters(String),

    #[error("inconsistent curve at n={n}: pmf {value:e} for type {ty}")]
    InconsistentCurve { n: usize, ty: usize, value: f64 },

    #[error("precondition fails: {0}")]
    Precondition(String),

    #[error("invalid linear-fractional parameters for type {ty} at generation {k}: {reason}")]
    InvalidLaw { ty: usize, k: usize, reason: String },

    #[error("explosion guard: offspring count {0} exceeds limit")]
    Explosion(u64),
}
