//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while configuring, simulating, estimating,
/// or calibrating.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field violates one of its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An argument violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// IRLS did not converge within the iteration budget.
    #[error("logistic fit did not converge after {iterations} iterations (deviance {deviance})")]
    NonConvergence { iterations: usize, deviance: f64 },

    /// Quasi-complete separation: a coefficient diverged or the working
    /// weights underflowed.
    #[error("separation detected in logistic fit: {0}")]
    SeparationDetected(String),

    /// The weighted normal equations are singular.
    #[error("rank-deficient design in logistic fit")]
    RankDeficient,

    /// A fitted propensity score reached 0 or 1 to machine precision.
    #[error("degenerate propensity score at index {0}")]
    DegenerateScore(usize),

    /// The treatment arm is constant; no effect is estimable.
    #[error("all subjects in one treatment arm")]
    AllOneArm,

    /// Maximum-likelihood fit of an error model failed.
    #[error("error-model optimization failed: {0}")]
    OptimizationFailed(String),

    /// Fewer controls than the error model needs.
    #[error("too few controls: need at least {needed}, got {got}")]
    TooFewControls { needed: usize, got: usize },

    /// All control true effects coincide; slope parameters unidentifiable.
    #[error("insufficient spread in control true effects")]
    InsufficientEffectSpread,

    /// Root bracketing for a calibrated interval endpoint failed.
    #[error("non-monotone predictive distribution: no bracket for the {side} interval endpoint")]
    NonMonotonePredictive { side: &'static str },

    /// Aggregation was asked for on an empty record set.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

/// An error tagged with the simulation iteration it occurred in.
#[derive(Debug, Error)]
#[error("iteration {iteration}: {source}")]
pub struct IterationError {
    pub iteration: usize,
    #[source]
    pub source: Error,
}
