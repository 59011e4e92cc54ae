use thiserror::Error;

/// Errors shared across the crate.
///
/// Numerical failure modes are first-class values here because the domain
/// scanner classifies them into rejection reasons instead of aborting.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("resonant or near-resonant divisor at mode k = {k}: |divisor| = {divisor:.3e}")]
    Resonance { k: i64, divisor: f64 },

    #[error("cohomological equation unsolvable at lambda = 1: right-hand side average {average:.3e} is nonzero")]
    NonzeroAverage { average: f64 },

    #[error("point leaves the model domain with margin {margin:.3e} required: {detail}")]
    DomainMargin { margin: f64, detail: String },

    #[error("frame is numerically singular (condition number {cond:.3e})")]
    SingularFrame { cond: f64 },

    #[error("hyperbolicity too weak: {0}")]
    HyperbolicityFailure(String),

    #[error("twist matrix is numerically singular (|det| = {det:.3e})")]
    TwistDegeneracy { det: f64 },

    #[error("spectral resolution exhausted: tail norm {tail:.3e} exceeds budget {budget:.3e}")]
    ResolutionExhausted { tail: f64, budget: f64 },

    #[error("iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("phase root-finding failed: {0}")]
    RootFinding(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
