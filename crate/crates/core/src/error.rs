use crate::potentials::Chart;

/// Errors shared across the crate. Variant names follow the failure modes of
/// the numerical pipeline rather than the call sites that produce them.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A point (or a finite-difference stencil around it) left the open
    /// domain of a model, in either chart.
    #[error("domain violation: {0}")]
    Domain(String),

    /// A Hessian failed the strict positive-definiteness gate.
    #[error("convexity failure: smallest Cholesky pivot {pivot:.3e} at {context}")]
    Convexity { pivot: f64, context: String },

    /// Newton inversion of the gradient map did not reach tolerance.
    #[error("gradient-map inversion did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The squared gradient-field norm is too close to zero for the Weyl
    /// covector to be formed.
    #[error("weyl covector singular: squared norm {eta_squared:.3e} at or below threshold {threshold:.0e}")]
    SingularWeyl { eta_squared: f64, threshold: f64 },

    /// The metric solve failed at the start of an integration.
    #[error("singular metric at t = {t}")]
    SingularMetric { t: f64 },

    /// A conserved-ratio denominator is exactly zero.
    #[error("division by zero: component {index} vanishes")]
    DivisionByZero { index: usize },

    /// A stencil-based estimator was given too few samples.
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// A stencil-based estimator was given non-uniform sample spacing.
    #[error("irregular sample spacing at index {index}")]
    IrregularSpacing { index: usize },

    /// Parallel transport or an adaptive integration failed for a reason
    /// other than a domain exit.
    #[error("integration failure: {0}")]
    Integration(String),

    /// A point was supplied in the wrong chart.
    #[error("chart mismatch: expected {expected:?}, got {got:?}")]
    ChartMismatch { expected: Chart, got: Chart },

    /// A vector has the wrong length for the model at hand.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The conserved ratio sum needs an even number of components.
    #[error("even dimension required, got {dim}")]
    OddDimension { dim: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
