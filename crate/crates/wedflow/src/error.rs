//! Error type shared across the crate.

use thiserror::Error;

/// Unified error enum. Variants name the contract that was violated rather
/// than the call site; callers match on the variant to map failures to exit
/// codes or recovery strategies.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An operation needed at least `required` grid nodes.
    #[error("grid too small: {nodes} nodes, operation requires at least {required}")]
    GridTooSmall { nodes: usize, required: usize },

    /// An integrability or growth exponent fell outside (1, inf).
    #[error("bad exponent {value} for {name}: must lie in (1, inf)")]
    BadExponent { name: &'static str, value: f64 },

    /// A scalar rate function sampled as decreasing somewhere.
    #[error("monotonicity violation: rate function decreases near s = {at}")]
    MonotonicityViolation { at: f64 },

    /// A nodewise (separable) representation was required but not available.
    #[error("potential is not nodewise separable; {op} requires separability")]
    NonSeparable { op: &'static str },

    /// A nodewise scalar solve did not reach tolerance.
    #[error("inner solve failed at node {node}: residual {residual:.3e} after {iters} iterations")]
    InnerSolveFailed {
        node: usize,
        residual: f64,
        iters: usize,
    },

    /// A field left the effective domain of a potential.
    #[error("domain violation: field outside the effective domain of {what}")]
    DomainViolation { what: &'static str },

    /// The trajectory solver ran out of iterations.
    #[error(
        "max iterations exceeded: residual {residual:.3e} after {iters} iterations (tol {tol:.1e})"
    )]
    MaxIterExceeded {
        iters: usize,
        residual: f64,
        tol: f64,
    },

    /// Backtracking could not find a decreasing step.
    #[error("line search failed at iteration {iter}: no decrease after {backtracks} backtracks")]
    LineSearchFailed { iter: usize, backtracks: usize },

    /// An iterate norm exceeded the divergence guard.
    #[error("divergence detected at outer iteration {outer_iter}: norm {norm:.3e} exceeds guard {guard:.3e}")]
    DivergenceDetected {
        outer_iter: usize,
        norm: f64,
        guard: f64,
    },

    /// The outer fixed-point loop ran out of iterations.
    #[error("max outer iterations exceeded: distance {distance:.3e} after {iters} iterations (tol {tol:.1e})")]
    MaxOuterIterExceeded {
        iters: usize,
        distance: f64,
        tol: f64,
    },

    /// A bisection bracket was empty or inverted.
    #[error("bracket invalid: ({lo}, {hi}) must satisfy 0 < lo < hi")]
    BracketInvalid { lo: f64, hi: f64 },

    /// A dense Newton solve inside a stepper failed.
    #[error("newton solve failed at step {step}: {reason}")]
    NewtonFailed { step: usize, reason: &'static str },

    /// A guard, tolerance, or array bound was nonsensical.
    #[error("bad bounds for {name}: {detail}")]
    BadBounds { name: &'static str, detail: String },

    /// A problem wiring requires exponents it did not get.
    #[error("exponent mismatch: {detail}")]
    ExponentMismatch { detail: String },

    /// A run configuration failed validation; names the offending key.
    #[error("invalid config: key `{key}`: {detail}")]
    ConfigInvalid { key: String, detail: String },

    /// Field/space shape disagreement.
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
