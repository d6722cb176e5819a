//! Numerical Stackelberg–Nash hierarchical control for a coupled weakly
//! degenerate semilinear parabolic system on a moving 1D domain.
//!
//! The moving-boundary problem on Ω_t = (0, ℓ(t)) is pulled back to the unit
//! cylinder, where two follower controls reach a Nash quasi-equilibrium for
//! quadratic tracking costs and a leader control steers both states to
//! (approximately) zero at the final time.  The library provides:
//!
//! * [`geometry`] — the degenerate coefficient a(x) = x^α, the moving domain,
//!   and the cylinder transformation with its coefficients b(t), ℓ'x/ℓ;
//! * [`weights`] — the Carleman weight families (singular and modified) and
//!   the ρ-weights of the control estimates, evaluated in log space;
//! * [`pde`] — flux-form finite differences for the degenerate operator and
//!   implicit-Euler forward/adjoint solvers with exact discrete duality;
//! * [`nash`] — the follower Nash quasi-equilibrium solver (adjoint feedback
//!   fixed point), functional derivatives, and convexity estimates;
//! * [`oracle`] — an independent monolithic direct solve of the coupled
//!   optimality system, used as the reference path in tests;
//! * [`leader`] — penalized null control of the linearized optimality system
//!   by conjugate gradient, the outer semilinear iteration, and the
//!   observability diagnostic;
//! * [`config`] / [`run`] — problem configuration, CSV reports, and the
//!   subcommand drivers behind the CLI.

pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod leader;
pub mod nash;
pub mod oracle;
pub mod pde;
pub mod run;
pub mod weights;

pub use error::{Result, SolverError};
