//! Actor-critic solver for finite-horizon stochastic optimal control.

pub mod error;
pub mod actor;
pub mod cli;
pub mod critic;
pub mod eval;
pub mod func;
pub mod nets;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod sde;
pub mod trainer;

pub use error::{Error, Result};
