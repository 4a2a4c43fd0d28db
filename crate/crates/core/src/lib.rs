//! Numerical integration and empirical analysis of the Nesterov accelerated
//! primal-dual dynamical system for `min f(x) s.t. Ax = b`.
//!
//! * [`problem`]: problem types, augmented Lagrangian, Bregman distance,
//!   KKT residuals, a catalog of test problems and a reference solver.
//! * [`dynamics`]: right-hand side of the (time-scaled) system and
//!   parameter validation.
//! * [`integrator`]: adaptive Dormand–Prince 5(4) with dense output.
//! * [`diagnostics`]: energy, residual series and rate tests.
//! * [`config`], [`runner`], [`report`], [`acceptance`]: the batch runner
//!   behind the `napd` binary.

pub mod acceptance;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod problem;
pub mod report;
pub mod runner;
mod serde_ext;

pub use error::{Error, Result};
