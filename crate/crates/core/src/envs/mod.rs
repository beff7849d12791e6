//! Simulators emitting RGB observations: grid-world mazes and a continuous
//! top-down navigation task.

pub mod grid;
pub mod nav;
pub mod raster;

use serde::{Deserialize, Serialize};

pub use grid::{GridWorld, GridWorldConfig, GridWorldState};
pub use nav::{ContinuousNav, ContinuousNavConfig, ContinuousNavState};

use crate::error::Result;
use crate::types::{DiscreteAction, Observation};

/// Outcome of one environment step.
#[derive(Clone, Debug)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    /// A true terminal state (goal reached or crash).
    pub terminal: bool,
    /// Episode cut by the step budget.
    pub truncated: bool,
    /// The episode ended by reaching the goal.
    pub success: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    fn name(&self) -> String;
    fn n_actions(&self) -> usize;
    /// `(height, width)` of observations.
    fn image_size(&self) -> (usize, usize);
    fn reset(&mut self) -> Observation;
    fn step(&mut self, action: DiscreteAction) -> Result<Step>;
    fn is_done(&self) -> bool;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Grid(GridWorldConfig),
    Nav(ContinuousNavConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Grid(GridWorldConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Grid(c) => Box::new(GridWorld::new(c.clone())?),
            EnvConfig::Nav(c) => Box::new(ContinuousNav::new(c.clone())?),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Grid(c) => c.validate(),
            EnvConfig::Nav(c) => c.validate(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            EnvConfig::Grid(c) => c.seed = seed,
            EnvConfig::Nav(c) => c.seed = seed,
        }
        out
    }

    pub fn image_size(&self) -> usize {
        match self {
            EnvConfig::Grid(c) => c.image_size,
            EnvConfig::Nav(c) => c.image_size,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvConfig::Grid(c) => c.n_actions,
            EnvConfig::Nav(c) => c.n_actions,
        }
    }

    pub fn r_reached(&self) -> f64 {
        match self {
            EnvConfig::Grid(c) => c.r_reached,
            EnvConfig::Nav(c) => c.r_reached,
        }
    }
}
