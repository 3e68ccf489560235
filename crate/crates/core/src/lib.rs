//! Sampling-based model predictive control.
//!
//! Control plans are splines whose knots are optimized every iteration by
//! sampling perturbed knots, rolling each candidate out through the task
//! dynamics in parallel, and folding the rewards back into a new nominal
//! plan. The [`nodes`] module runs a simulator, the controller and a
//! websocket bridge as independent threads over a keep-last message bus.

pub mod bench;
pub mod config;
pub mod controller;
pub mod error;
pub mod nodes;
pub mod optimizers;
pub mod registry;
pub mod rollout;
pub mod spline;
pub mod tasks;

pub use error::{Error, Result};
