//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("no real fixed points: discriminant {discriminant} <= 0")]
    NoRealFixedPoints { discriminant: f64 },

    #[error("complex eigenvalues at fixed point: radicand {radicand} < 0")]
    ComplexEigenvalues { radicand: f64 },

    #[error("resonance obstruction at order {order}: |divisor| = {divisor}")]
    ResonanceObstruction { order: usize, divisor: f64 },

    #[error("sample left the blow-up guard (|p| > {limit}) at t = {t}")]
    BlowUp { t: f64, limit: f64 },

    #[error("segment is not a graph over x; folds at x = {folds:?}")]
    NotAGraph { folds: Vec<f64> },

    #[error("evaluation outside domain: {0}")]
    OutOfDomain(String),

    #[error("Newton did not converge after {iterations} iterations (residual {residual}): {context}")]
    NewtonDiverged {
        iterations: usize,
        residual: f64,
        context: String,
    },

    #[error("tangency order ambiguous: |g''| = {g2} below threshold {threshold}")]
    OrderAmbiguous { g2: f64, threshold: f64 },

    #[error("tangency order too high: |g'''| = {g3} below threshold {threshold}")]
    OrderTooHigh { g3: f64, threshold: f64 },

    #[error("degenerate unfolding: |det| = {det} below threshold {threshold}")]
    DegenerateUnfolding { det: f64, threshold: f64 },

    #[error("unclassifiable contact: all derivatives below threshold")]
    Unclassifiable,

    #[error("finite-difference step underflow: {0}")]
    StepUnderflow(String),

    #[error("indeterminate contact classification: |dg/ds| = {speed} below tolerance")]
    Indeterminate { speed: f64 },

    #[error("continuation stalled at b = {last_b} (step {step} below floor)")]
    ContinuationStalled { last_b: f64, step: f64 },

    #[error("no sign change of the secondary gap along the curve: {0}")]
    NoSignChange(String),

    #[error("converged point ({a}, {b}) left the trust region around ({a0}, {b0})")]
    SeedOutOfNeighborhood { a: f64, b: f64, a0: f64, b0: f64 },

    #[error("iterated arc left the chart window: {0}")]
    WindowEscape(String),

    #[error("orbit escaped the bounded region after {iterations} iterations")]
    OrbitEscaped { iterations: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
