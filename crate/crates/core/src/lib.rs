//! Explicit truncated Euler-Maruyama segment process (TEMSP) for stochastic
//! delay differential equations
//!
//! ```text
//! dx(t) = f(x(t), x(t - tau)) dt + g(x(t), x(t - tau)) dW(t)
//! ```
//!
//! with superlinearly growing coefficients, together with the empirical
//! segment-measure statistics used to watch the numerical law settle onto
//! its invariant measure.
//!
//! The crate is organised around a handful of pluggable strategies, each
//! behind a trait and selectable by name at runtime:
//!
//! - [`model::SddeModel`] coefficient sets ([`model::ModelRegistry`]),
//! - [`truncation::GrowthFunction`] choices of the growth bound `Phi`,
//! - [`measure::TestFunctional`] observables on segment space,
//! - [`measure::TransportSolver`] estimators of the truncated Wasserstein distance
//!   ([`measure::SolverRegistry`]).

pub mod error;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod rng;
pub mod scheme;
pub mod truncation;

pub use error::{Error, Result};
