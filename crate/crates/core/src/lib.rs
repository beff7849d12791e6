//! Learning latent state and action spaces that form an approximate MDP
//! homomorphism of a pixel-observed control problem, training a latent TD3
//! policy on top of them, and checking the optimality-preservation results on
//! exact tabular instances.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`], [`replay`], [`dataset`]: observations, transitions, replay
//!   storage and the on-disk transition format.
//! - [`envs`]: grid-world mazes and a continuous top-down navigation task.
//! - [`nets`]: a small fp64 neural substrate with hand-written backprop and the
//!   five representation networks.
//! - [`repr`]: the representation objective and its trainer.
//! - [`agents`]: latent TD3 and the latent-state DQN baseline.
//! - [`homoverify`]: tabular homomorphism, lifting and policy-gradient checks.
//! - [`analysis`]: PCA maps, curve aggregation and structure scores.
//! - [`pipeline`]: experiment configs, manifests and the staged runner.

pub mod agents;
pub mod analysis;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod homoverify;
pub mod nets;
pub mod pipeline;
pub mod replay;
pub mod repr;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use types::{one_hot, DiscreteAction, LatentAction, LatentState, Observation, Transition};
