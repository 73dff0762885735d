//! Finite-sample deviation bounds for suprema of random processes and for
//! penalized maximum-likelihood estimators, together with a seeded Monte Carlo
//! harness that validates every implemented bound against exact or brute-force
//! oracles at desk scale.
//!
//! The crate is organized in layers:
//!
//! * [`numerics`] — small dense symmetric linear algebra (Jacobi eigensolver,
//!   spectral calculus, PSD solves) used by everything else.
//! * [`bounds`] — chaining entropy budgets `(Q1, Q2)` for the supported set
//!   geometries, the tail quantile `z_H(x)`, the sub-exponential sum lemma,
//!   moment bounds, and the slicing drift.
//! * [`quadform`] — deviation quantiles for quadratic forms, the effective
//!   dimension, and its closed-form examples.
//! * [`models`] — i.i.d. regression families with analytic expected
//!   log-likelihoods and information matrices.
//! * [`pmle`] — the penalized MLE solver, Fisher/Wilks residuals, condition
//!   diagnostics, and the quadratic-risk decomposition.
//! * [`mcharness`] — parallel, reproducible Monte Carlo experiments checking
//!   each bound empirically.

pub mod bounds;
pub mod error;
pub mod mcharness;
pub mod models;
pub mod numerics;
pub mod pmle;
pub mod quadform;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
