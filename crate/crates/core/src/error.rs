//! Error type shared by every operation in the crate.

use thiserror::Error;

/// Failures surfaced by chart operations, embeddings, and experiments.
///
/// Numerical routines are total on their stated domains; everything outside
/// those domains is reported through this enum rather than clipped or
/// silently patched.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A query point sits too close to the chart boundary or an excluded
    /// point for the requested stencil or kernel support.
    #[error("point {point:?} is within {margin:.3e} of the chart boundary or an excluded point (needed {needed:.3e})")]
    BoundaryProximity {
        point: Vec<f64>,
        margin: f64,
        needed: f64,
    },

    /// A quadrature sample evaluated to a non-finite value.
    #[error("integrand returned a non-finite value at {point:?}")]
    IntegrationPoisoned { point: Vec<f64> },

    /// Geodesic shooting failed to connect two points.
    #[error("no geodesic found from {from:?} to {to:?} after {iterations} iterations (residual {residual:.3e})")]
    NoGeodesic {
        from: Vec<f64>,
        to: Vec<f64>,
        iterations: usize,
        residual: f64,
    },

    /// A geodesic left the chart domain before reaching its target.
    #[error("geodesic from {from:?} toward {to:?} left the chart domain")]
    DomainEscape { from: Vec<f64>, to: Vec<f64> },

    /// The regularized metric lost invertibility at a sample point.
    #[error("regularized metric is degenerate at {point:?} (eps {eps:.3e}, |det| {det:.3e} below floor {floor:.3e})")]
    DegenerateMetric {
        point: Vec<f64>,
        eps: f64,
        det: f64,
        floor: f64,
    },

    /// An operation was asked for a differential it cannot supply, e.g. the
    /// parameter differential of a field with non-affine parameter dependence.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// An index slot was out of range for a tensor valence.
    #[error("index {index} out of range for valence ({rank_up},{rank_down})")]
    IndexOutOfRange {
        index: usize,
        rank_up: usize,
        rank_down: usize,
    },

    /// A constructor rejected its inputs.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
