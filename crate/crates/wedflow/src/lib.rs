//! Variational solvers for doubly-nonlinear evolution equations of the form
//!
//! ```text
//!     d_V psi(u'(t)) + d phi^1(u(t)) - d phi^2(u(t)) - f(u(t)) = 0,   u(0) = u0,
//! ```
//!
//! where `psi` is a convex dissipation, `phi = phi^1 - phi^2` a difference of
//! convex energies, and `f` a nonpotential (non-gradient) perturbation.
//!
//! Instead of time stepping, the flow is recovered as the causal limit of
//! elliptic-in-time boundary value problems: for a relaxation parameter
//! `eps > 0` one minimizes the exponentially weighted functional
//!
//! ```text
//!     I_eps(u) = int_0^T e^{-t/eps} [ eps psi(u') + phi(u) - <w, u> ] dt
//! ```
//!
//! over trajectories with `u(0) = u0`. Minimizers solve the regularized system
//! `-eps xi' + xi + eta^1 - eta^2 = w`, `xi = d_V psi(u')`, with the natural
//! final condition `xi(T) = 0`, and converge to the causal flow as `eps -> 0`.
//! The nonpotential term is restored by a damped fixed-point iteration on `w`.
//!
//! Module map:
//! - [`spaces`]: 1-D discrete function spaces, `L^p`/Sobolev norms, duality maps.
//! - [`potentials`]: dissipations, energies, splits, perturbations, conjugates.
//! - [`moreau_yosida`]: resolvents, Yosida gradients, Moreau envelopes.
//! - [`wed`]: the weighted functional, its gradient, and the trajectory solver.
//! - [`fixed_point`]: damped fixed-point outer iterations and diagnostics.
//! - [`oracle`]: implicit-Euler reference stepper for causal-limit comparisons.
//! - [`sweeps`]: parameter sweeps, stability-threshold detection, CSV tables.
//! - [`pde`]: assembled 1-D problem families (quasilinear parabolic systems,
//!   a clamped fourth-order flow with transport).
//! - [`acceptance`]: the executable acceptance suite shared by tests and CLI.

pub mod acceptance;
pub mod error;
pub mod fixed_point;
pub mod linalg;
pub mod moreau_yosida;
pub mod oracle;
pub mod parallel;
pub mod pde;
pub mod potentials;
pub mod spaces;
pub mod sweeps;
pub mod wed;

pub use error::Error;
