//! Simulation and numerical verification toolkit for a hybrid model of
//! blood-cell production under a randomly switching cancer stem cell.
//!
//! The crate provides, in order of dependency:
//!
//! - [`model`]: parameters, regulation rates, the limit vector fields
//!   with their analytic calculus, the invariant box and the extended
//!   generator;
//! - [`equilibrium`]: the quiescent-regime equilibrium, regime-frozen
//!   flows and accessible-point sampling;
//! - [`ssa`]: exact and tau-leaping simulation of the finite-population
//!   jump process;
//! - [`pdmp`]: simulation of the limit piecewise-deterministic process
//!   with exact hazard-inversion switching;
//! - [`stats`]: occupation measures, distribution distances, scaling
//!   diagnostics, ergodic and weak-form residuals.

pub mod equilibrium;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod pdmp;
pub mod ssa;
pub mod stats;
pub mod testfn;

pub use error::{Error, Result};
