//! Composite stochastic mirror descent for `min F(x) + (μ/q)‖x‖_q^q`.
//!
//! Two solvers share one closed-form proximal step: [`solvers::nacsmd`]
//! (averaged, non-accelerated) and [`solvers::acsmd`] (accelerated).
//! [`diagnostics`] checks the pathwise certificates and the lower-bound
//! construction numerically.

pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod oracles;
pub mod regularizers;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
