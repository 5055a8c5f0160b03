use thiserror::Error;

/// Errors surfaced by the geometric and solver layers.
///
/// Variants carry the operation name so a front end can report which
/// module-level contract failed.
#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate or parameter left the modeled domain, e.g. `r < r₁`.
    #[error("{op}: {message}")]
    Domain { op: &'static str, message: String },

    /// Mismatched grid sizes or coefficient lengths.
    #[error("{op}: dimension mismatch, expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    /// `⟨ν, ∂_r⟩ ≤ 0` somewhere: the surface is no longer a graph.
    #[error("{op}: graph orientation violated (⟨ν,∂_r⟩ ≤ 0 at a node)")]
    OrientationViolated { op: &'static str },

    /// Newton-type iteration failed to converge.
    #[error("{op}: no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The linearization is numerically singular.
    #[error("{op}: singular Jacobian encountered")]
    SingularJacobian { op: &'static str },

    /// Continuation step length underflow.
    #[error("continuation_in_t: step underflow (Δt = {step:.3e} at t = {t:.6}), {diagnostics}")]
    StepUnderflow {
        step: f64,
        t: f64,
        diagnostics: String,
    },

    /// Input outside the regime an operation is guaranteed to handle.
    #[error("{op}: regime violation, {message}")]
    Regime { op: &'static str, message: String },

    /// The lapse changed sign across a leaf: the family is not a foliation.
    #[error("foliation_sweep: foliation property violated (lapse changes sign at l = {l})")]
    FoliationViolated { l: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
