//! Inverse-variance reinforcement learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense MLP engine with exact gradients and Adam.
//! - [`uncertainty`]: variance networks, randomized priors and ensemble
//!   variance estimators (sampled and Gaussian-mixture).
//! - [`weighting`]: batch inverse-variance weights, effective batch size,
//!   the ξ solver, and the critic/actor losses built on them.
//! - [`replay`]: masked replay buffer.
//! - [`envs`]: CartPole-Noise, MountainCar, Pendulum and a solvable chain MDP.
//! - [`agents`]: the DQN and SAC families, including every ablation.
//! - [`harness`]: declarative experiments, metrics files, summaries and sweeps.

pub mod agents;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod uncertainty;
pub mod weighting;

pub use error::{Error, Result};
