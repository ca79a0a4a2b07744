//! Physics-informed neural-network solver for the four-dimensional energy
//! supply-demand ODE system, with an adaptive Dormand-Prince 5(4) reference
//! integrator and tooling to compare the two solutions.
//!
//! Module map:
//! - [`esd`] — the ODE system: parameters, state, right-hand side.
//! - [`mlp`] — the tanh network `t -> (X1..X4)` and its flat parameter view.
//! - [`diff`] — exact tangents and loss gradients, plus finite-difference
//!   oracles.
//! - [`rk45`] — adaptive embedded Runge-Kutta integration with dense output.
//! - [`trainer`] — collocation grid, loss terms, Adam, the training loop.
//! - [`evaluator`] — residual-MSE and R2/MAE/MSE/RMSE protocols.
//! - [`config`] / [`cli`] — run configuration and the command pipeline.

pub mod cli;
pub mod config;
pub mod diff;
pub mod error;
pub mod esd;
pub mod evaluator;
pub mod mlp;
pub mod rk45;
pub mod trainer;

pub use error::{Error, Result};
