//! Categorical distributional reinforcement learning and ensemble categorical
//! control, with exact distributional dynamic programming on finite MDPs as
//! the reference for every stochastic component.

pub mod approx;
pub mod categorical;
pub mod error;
pub mod ensemble;
pub mod envs;
pub mod harness;
pub mod mdp;
pub mod schedule;
pub mod tabular;

pub use error::{Error, Result};
