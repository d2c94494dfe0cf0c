//! g-expectations, quadratic reflected BSDEs and nonlinear optimal
//! stopping on discrete Brownian lattices.
//!
//! The probability space is a symmetric `±sqrt(dt)` random walk, either as
//! a full binary tree of paths or as a recombining lattice. Every
//! conditional expectation is an exact finite sum, so the solvers can be
//! checked against brute-force enumeration of stopping times and controls.

pub mod agent;
pub mod convergence;
pub mod drivers;
pub mod error;
pub mod gexp;
pub mod lattice;
pub mod par;
pub mod rbsde;
pub mod snell;

pub use error::{Error, Result};
pub use par::Execution;
