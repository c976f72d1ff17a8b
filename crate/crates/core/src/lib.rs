//! Hierarchical ensemble deterministic policy gradients.
//!
//! `N` TD3-style base learners share one replay buffer. A central critic
//! estimates the value of the averaged ensemble policy, and every learner's
//! policy is periodically moved along the ensemble policy gradient with a
//! stabilized linear three-step integration rule that mixes in the parameters
//! of two randomly chosen peers.

pub mod analysis;
pub mod cli;
pub mod ensemble;
pub mod envs;
pub mod error;
pub mod learner;
pub mod multistep;
pub mod nn;
pub mod replay;

pub use error::{HedError, Result};
