//! Continuous 2D point-robot navigation with a top-down camera.

use std::f64::consts::{FRAC_PI_4, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::raster::{self, Canvas};
use super::{Environment, Step};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{DiscreteAction, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuousNavConfig {
    pub arena_size: f64,
    /// 3: forward, rotate left, rotate right. 8: compass translations.
    pub n_actions: usize,
    pub d_min: f64,
    pub r_reached: f64,
    pub r_crashed: f64,
    pub eta: f64,
    pub image_size: usize,
    pub max_steps: usize,
    /// Translation per move as a fraction of the arena side.
    pub step_fraction: f64,
    pub turn_angle: f64,
    /// Goal position as fractions of the arena side.
    pub goal: (f64, f64),
    pub seed: u64,
}

impl Default for ContinuousNavConfig {
    fn default() -> Self {
        Self {
            arena_size: 1.0,
            n_actions: 3,
            d_min: 0.1,
            r_reached: 1.0,
            r_crashed: -1.0,
            eta: 0.1,
            image_size: 48,
            max_steps: 100,
            step_fraction: 0.05,
            turn_angle: FRAC_PI_4,
            goal: (0.75, 0.75),
            seed: 0,
        }
    }
}

impl ContinuousNavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena_size > 0.0 && self.d_min > 0.0 && self.d_min < self.arena_size) {
            return Err(Error::Config("nav requires 0 < d_min < arena_size".into()));
        }
        if !(self.r_crashed < 0.0 && 0.0 < self.r_reached) {
            return Err(Error::Config("nav requires r_crashed < 0 < r_reached".into()));
        }
        if !matches!(self.n_actions, 3 | 8) {
            return Err(Error::Config(format!("nav n_actions must be 3 or 8, got {}", self.n_actions)));
        }
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if !inside(self.goal.0) || !inside(self.goal.1) {
            return Err(Error::Config("goal must lie inside the arena".into()));
        }
        if self.image_size < 8 || self.max_steps == 0 || !(self.step_fraction > 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Config("invalid nav image size, step size, eta or step budget".into()));
        }
        Ok(())
    }

    pub fn goal_position(&self) -> (f64, f64) {
        (self.goal.0 * self.arena_size, self.goal.1 * self.arena_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousNavState {
    pub position: (f64, f64),
    pub heading: f64,
    pub goal: (f64, f64),
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct ContinuousNav {
    config: ContinuousNavConfig,
    state: ContinuousNavState,
    done: bool,
    rng: Rng,
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl ContinuousNav {
    pub fn new(config: ContinuousNavConfig) -> Result<Self> {
        config.validate()?;
        let goal = config.goal_position();
        Ok(Self {
            rng: rng::seeded(config.seed, "nav.spawn"),
            state: ContinuousNavState { position: goal, heading: 0.0, goal, steps: 0 },
            done: true,
            config,
        })
    }

    pub fn config(&self) -> &ContinuousNavConfig {
        &self.config
    }

    pub fn state(&self) -> &ContinuousNavState {
        &self.state
    }

    pub fn goal_distance(&self) -> f64 {
        distance(self.state.position, self.state.goal)
    }

    pub fn set_state(&mut self, state: ContinuousNavState) -> Observation {
        self.done = distance(state.position, state.goal) <= self.config.d_min || state.steps >= self.config.max_steps;
        self.state = state;
        self.render()
    }

    pub fn render(&self) -> Observation {
        render_state(&self.config, &self.state)
    }
}

impl Environment for ContinuousNav {
    fn name(&self) -> String {
        format!("nav-a{}", self.config.n_actions)
    }

    fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    fn image_size(&self) -> (usize, usize) {
        (self.config.image_size, self.config.image_size)
    }

    fn reset(&mut self) -> Observation {
        let a = self.config.arena_size;
        let goal = self.config.goal_position();
        let position = loop {
            let p = (self.rng.random_range(0.0..a), self.rng.random_range(0.0..a));
            if distance(p, goal) > self.config.d_min {
                break p;
            }
        };
        let heading = if self.config.n_actions == 3 { self.rng.random_range(0.0..TAU) } else { 0.0 };
        self.state = ContinuousNavState { position, heading, goal, steps: 0 };
        self.done = false;
        self.render()
    }

    fn step(&mut self, action: DiscreteAction) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action.n_actions() != self.config.n_actions {
            return Err(Error::ActionOutOfRange { index: action.index(), n_actions: self.config.n_actions });
        }
        let step = self.config.step_fraction * self.config.arena_size;
        let (x, y) = self.state.position;
        let mut next = (x, y);
        if self.config.n_actions == 3 {
            match action.index() {
                0 => next = (x + step * self.state.heading.cos(), y + step * self.state.heading.sin()),
                1 => self.state.heading = (self.state.heading + self.config.turn_angle).rem_euclid(TAU),
                _ => self.state.heading = (self.state.heading - self.config.turn_angle).rem_euclid(TAU),
            }
        } else {
            let angle = action.index() as f64 * FRAC_PI_4;
            next = (x + step * angle.cos(), y + step * angle.sin());
        }
        self.state.steps += 1;
        let a = self.config.arena_size;
        let crashed = !(0.0..=a).contains(&next.0) || !(0.0..=a).contains(&next.1);
        let (reward, success) = if crashed {
            (self.config.r_crashed, false)
        } else {
            self.state.position = next;
            let d = self.goal_distance();
            if d <= self.config.d_min {
                (self.config.r_reached, true)
            } else {
                (-self.config.eta * d, false)
            }
        };
        let terminal = crashed || success;
        let truncated = !terminal && self.state.steps >= self.config.max_steps;
        self.done = terminal || truncated;
        Ok(Step { observation: self.render(), reward, terminal, truncated, success })
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

pub fn render_state(config: &ContinuousNavConfig, state: &ContinuousNavState) -> Observation {
    let n = config.image_size;
    let scale = n as f64 / config.arena_size;
    let mut canvas = Canvas::new(n, n, raster::LIGHT_GREY);
    for i in 0..n {
        for (y, x) in [(0, i), (n - 1, i), (i, 0), (i, n - 1)] {
            canvas.set(y, x, raster::DARK_GREY);
        }
    }
    canvas.fill_disc(state.goal.0 * scale, state.goal.1 * scale, config.d_min * scale, raster::PURPLE);
    let (cx, cy) = (state.position.0 * scale, state.position.1 * scale);
    let r = 0.06 * n as f64;
    if config.n_actions == 3 {
        let h = state.heading;
        let vertex = |angle: f64, len: f64| (cx + len * angle.cos(), cy + len * angle.sin());
        canvas.fill_triangle([vertex(h, 1.4 * r), vertex(h + 2.5, r), vertex(h - 2.5, r)], raster::RED);
    } else {
        canvas.fill_disc(cx, cy, r, raster::RED);
    }
    canvas.into_observation()
}
