//! Finite-horizon minmax regulator against a disturbance whose total energy
//! over the horizon is bounded.
//!
//! The solver works through a scalar Lagrange multiplier `lambda` on the
//! energy bound. For fixed `lambda` the game reduces to a backward Riccati
//! recursion ([`riccati`]); the multiplier is then optimized per state
//! ([`multiplier`]) above a stagewise feasibility bound ([`feasibility`]).
//! [`policy`] runs the resulting nonlinear feedback in closed loop,
//! [`regions`] describes where that feedback is linear, and [`oracle`]
//! holds independent checks used by the test suite and the `check` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod feasibility;
pub mod linalg;
pub mod model;
pub mod multiplier;
pub mod oracle;
pub mod policy;
pub mod regions;
pub mod riccati;

pub use error::{Result, SidarError};
pub use feasibility::{lambda_ladder, FeasibilityLadder};
pub use model::{validate_instance, ProblemInstance, ValidationReport};
pub use multiplier::{MultiplierSolution, Solver};
pub use riccati::{backward_sweep, RiccatiSweep, StageData};
