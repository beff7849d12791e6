//! Grid-world navigation with pixel observations.

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::raster::{self, Canvas, Rgb};
use super::{Environment, Step};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{DiscreteAction, Observation};

pub type Cell = (usize, usize);

/// Row/column offsets: N, S, E, W, then NE, NW, SE, SW.
pub const MOVES: [(isize, isize); 8] = [(-1, 0), (1, 0), (0, 1), (0, -1), (-1, 1), (-1, -1), (1, 1), (1, -1)];

/// What the Manhattan distance is divided by in the shaping penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    /// Number of cells in the maze (`rows * cols`).
    #[default]
    Cells,
    /// Side length (`max(rows, cols)`).
    Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldConfig {
    pub grid_n: usize,
    /// Row count when the grid is not square; defaults to `grid_n`.
    pub grid_rows: Option<usize>,
    pub n_actions: usize,
    pub n_distractors: usize,
    pub image_size: usize,
    pub r_reached: f64,
    pub eta: f64,
    pub distance_norm: DistanceNorm,
    pub max_steps: usize,
    /// Goal cell; defaults to the bottom-right corner.
    pub goal: Option<Cell>,
    pub seed: u64,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        Self {
            grid_n: 6,
            grid_rows: None,
            n_actions: 4,
            n_distractors: 0,
            image_size: 50,
            r_reached: 1.0,
            eta: 0.1,
            distance_norm: DistanceNorm::Cells,
            max_steps: 50,
            goal: None,
            seed: 0,
        }
    }
}

impl GridWorldConfig {
    pub fn new(grid_n: usize, n_actions: usize) -> Self {
        Self { grid_n, n_actions, ..Self::default() }
    }

    pub fn rows(&self) -> usize {
        self.grid_rows.unwrap_or(self.grid_n)
    }

    pub fn cols(&self) -> usize {
        self.grid_n
    }

    pub fn goal_cell(&self) -> Cell {
        self.goal.unwrap_or((self.rows() - 1, self.cols() - 1))
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = (self.rows(), self.cols());
        if rows * cols < 2 || rows == 0 || cols == 0 {
            return Err(Error::Config("grid needs at least two cells".into()));
        }
        if !matches!(self.n_actions, 4 | 8) {
            return Err(Error::Config(format!("grid n_actions must be 4 or 8, got {}", self.n_actions)));
        }
        if self.n_distractors > 3 || self.n_distractors + 2 > rows * cols {
            return Err(Error::Config(format!("{} distractors do not fit", self.n_distractors)));
        }
        if self.image_size < rows.max(cols) {
            return Err(Error::Config("image_size must be at least the grid size".into()));
        }
        let goal = self.goal_cell();
        if goal.0 >= rows || goal.1 >= cols {
            return Err(Error::Config(format!("goal {goal:?} lies outside the grid")));
        }
        if !(self.eta >= 0.0 && self.r_reached.is_finite() && self.eta.is_finite()) {
            return Err(Error::Config("reward parameters must be finite with eta >= 0".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn norm(&self) -> f64 {
        match self.distance_norm {
            DistanceNorm::Cells => (self.rows() * self.cols()) as f64,
            DistanceNorm::Side => self.rows().max(self.cols()) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridWorldState {
    pub agent_cell: Cell,
    pub goal_cell: Cell,
    pub distractor_cells: Vec<Cell>,
    pub steps: usize,
}

pub fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    config: GridWorldConfig,
    state: GridWorldState,
    done: bool,
    spawn_rng: Rng,
    distractor_rng: Rng,
}

impl GridWorld {
    pub fn new(config: GridWorldConfig) -> Result<Self> {
        config.validate()?;
        let goal = config.goal_cell();
        Ok(Self {
            spawn_rng: rng::seeded(config.seed, "grid.spawn"),
            distractor_rng: rng::seeded(config.seed, "grid.distractors"),
            state: GridWorldState { agent_cell: goal, goal_cell: goal, distractor_cells: Vec::new(), steps: 0 },
            done: true,
            config,
        })
    }

    pub fn config(&self) -> &GridWorldConfig {
        &self.config
    }

    pub fn state(&self) -> &GridWorldState {
        &self.state
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> Vec<Cell> {
        (0..self.config.rows()).flat_map(|r| (0..self.config.cols()).map(move |c| (r, c))).collect()
    }

    /// Cells an episode can start from.
    pub fn spawn_cells(&self) -> Vec<Cell> {
        self.cells().into_iter().filter(|c| *c != self.state.goal_cell).collect()
    }

    /// Result of moving from `cell`; off-grid moves leave it unchanged.
    pub fn move_cell(&self, cell: Cell, action: usize) -> Cell {
        let (dr, dc) = MOVES[action];
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 || r >= self.config.rows() as isize || c >= self.config.cols() as isize {
            cell
        } else {
            (r as usize, c as usize)
        }
    }

    /// Reward for the agent standing in `cell` after a move.
    pub fn reward_at(&self, cell: Cell) -> f64 {
        if cell == self.state.goal_cell {
            self.config.r_reached
        } else {
            -self.config.eta * manhattan(cell, self.state.goal_cell) as f64 / self.config.norm()
        }
    }

    /// Places the agent (and distractors) explicitly; used to enumerate states.
    pub fn set_state(&mut self, state: GridWorldState) -> Result<Observation> {
        let in_grid = |c: &Cell| c.0 < self.config.rows() && c.1 < self.config.cols();
        if !in_grid(&state.agent_cell) || !state.distractor_cells.iter().all(in_grid) || state.goal_cell != self.config.goal_cell() {
            return Err(Error::Config(format!("invalid grid state {state:?}")));
        }
        self.done = state.agent_cell == state.goal_cell || state.steps >= self.config.max_steps;
        self.state = state;
        Ok(self.render())
    }

    /// Observation with the agent at `cell` and no distractors.
    pub fn observe_cell(&self, cell: Cell) -> Observation {
        let state = GridWorldState { agent_cell: cell, goal_cell: self.state.goal_cell, distractor_cells: Vec::new(), steps: 0 };
        render_state(&self.config, &state)
    }

    pub fn render(&self) -> Observation {
        render_state(&self.config, &self.state)
    }

    fn free_cells(&self, exclude: &[Cell]) -> Vec<Cell> {
        self.cells()
            .into_iter()
            .filter(|c| *c != self.state.agent_cell && *c != self.state.goal_cell && !exclude.contains(c))
            .collect()
    }

    fn move_distractors(&mut self) {
        for i in 0..self.state.distractor_cells.len() {
            let here = self.state.distractor_cells[i];
            let others: Vec<Cell> =
                self.state.distractor_cells.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| *c).collect();
            let blocked = |c: &Cell| *c == self.state.agent_cell || *c == self.state.goal_cell || others.contains(c);
            let mut options: Vec<Cell> = (0..4).map(|a| self.move_cell(here, a)).filter(|c| *c != here).collect();
            options.push(here);
            options.retain(|c| !blocked(c));
            let next = match options.choose(&mut self.distractor_rng) {
                Some(c) => *c,
                None => {
                    // boxed in or stepped on by the agent: jump to any free cell
                    let free = self.free_cells(&others);
                    *free.choose(&mut self.distractor_rng).expect("config guarantees a free cell")
                }
            };
            self.state.distractor_cells[i] = next;
        }
    }

    /// Shortest number of moves from the current agent cell to the goal.
    pub fn optimal_steps(&self) -> Result<usize> {
        self.optimal_steps_from(self.state.agent_cell)
    }

    /// Breadth-first search under this environment's action set.
    pub fn optimal_steps_from(&self, start: Cell) -> Result<usize> {
        let cols = self.config.cols();
        let mut dist = vec![usize::MAX; self.config.rows() * cols];
        let mut queue = VecDeque::from([start]);
        dist[start.0 * cols + start.1] = 0;
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.0 * cols + cell.1];
            if cell == self.state.goal_cell {
                return Ok(d);
            }
            for a in 0..self.config.n_actions {
                let next = self.move_cell(cell, a);
                let slot = &mut dist[next.0 * cols + next.1];
                if *slot == usize::MAX {
                    *slot = d + 1;
                    queue.push_back(next);
                }
            }
        }
        Err(Error::Unreachable)
    }

    /// Expected optimal episode length under the uniform spawn distribution.
    pub fn mean_optimal_steps(&self) -> f64 {
        let spawns = self.spawn_cells();
        let total: usize = spawns.iter().map(|c| self.optimal_steps_from(*c).expect("open grid")).sum();
        total as f64 / spawns.len() as f64
    }
}

impl Environment for GridWorld {
    fn name(&self) -> String {
        format!("grid{}x{}-a{}-d{}", self.config.rows(), self.config.cols(), self.config.n_actions, self.config.n_distractors)
    }

    fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    fn image_size(&self) -> (usize, usize) {
        (self.config.image_size, self.config.image_size)
    }

    fn reset(&mut self) -> Observation {
        let spawns = self.spawn_cells();
        self.state.agent_cell = spawns[self.spawn_rng.random_range(0..spawns.len())];
        self.state.steps = 0;
        self.state.distractor_cells.clear();
        for _ in 0..self.config.n_distractors {
            let free = self.free_cells(&self.state.distractor_cells);
            let cell = *free.choose(&mut self.distractor_rng).expect("validated distractor count");
            self.state.distractor_cells.push(cell);
        }
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
        self.state.agent_cell = self.move_cell(self.state.agent_cell, action.index());
        self.state.steps += 1;
        let success = self.state.agent_cell == self.state.goal_cell;
        let reward = self.reward_at(self.state.agent_cell);
        if !self.state.distractor_cells.is_empty() {
            self.move_distractors();
        }
        let truncated = !success && self.state.steps >= self.config.max_steps;
        self.done = success || truncated;
        Ok(Step { observation: self.render(), reward, terminal: success, truncated, success })
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

/// Pixel extent `(start, size)` of each cell along one axis, centred in the image.
fn cell_geometry(image_size: usize, cells: usize) -> (usize, usize) {
    let size = image_size / cells;
    (size, (image_size - size * cells) / 2)
}

/// Top-left pixel and side length of `cell`.
pub fn cell_box(config: &GridWorldConfig, cell: Cell) -> (usize, usize, usize) {
    let (size, offset) = cell_geometry(config.image_size, config.rows().max(config.cols()));
    let rows_pad = (config.rows().max(config.cols()) - config.rows()) * size / 2;
    let cols_pad = (config.rows().max(config.cols()) - config.cols()) * size / 2;
    (offset + rows_pad + cell.0 * size, offset + cols_pad + cell.1 * size, size)
}

pub fn render_state(config: &GridWorldConfig, state: &GridWorldState) -> Observation {
    let mut canvas = Canvas::new(config.image_size, config.image_size, raster::BLACK);
    let goal_color: Rgb = if config.n_distractors > 0 { raster::YELLOW } else { raster::GREEN };
    let inset = |size: usize| if size >= 6 { 1 } else { 0 };

    let (y, x, size) = cell_box(config, state.goal_cell);
    let m = inset(size);
    canvas.fill_rect(y + m, x + m, y + size - m, x + size - m, goal_color);

    for (i, cell) in state.distractor_cells.iter().enumerate() {
        let (y, x, size) = cell_box(config, *cell);
        let half = size as f64 / 2.0;
        let color = raster::DISTRACTOR_COLORS[i % raster::DISTRACTOR_COLORS.len()];
        canvas.fill_disc(x as f64 + half, y as f64 + half, half - inset(size) as f64, color);
    }

    let (y, x, size) = cell_box(config, state.agent_cell);
    let m = inset(size) as f64;
    let (y, x, s) = (y as f64, x as f64, size as f64);
    canvas.fill_triangle([(x + s / 2.0, y + m), (x + m, y + s - m), (x + s - m, y + s - m)], raster::RED);
    canvas.into_observation()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(n: usize, k: usize) -> GridWorld {
        GridWorld::new(GridWorldConfig::new(n, k)).unwrap()
    }

    fn colored_pixels(obs: &Observation, color: Rgb) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..obs.height() {
            for x in 0..obs.width() {
                let i = (y * obs.width() + x) * 3;
                if obs.pixels()[i..i + 3] == color {
                    out.push((y, x));
                }
            }
        }
        out
    }

    #[test]
    fn shaped_reward_far_corner() {
        let mut g = env(6, 4);
        g.set_state(GridWorldState { agent_cell: (0, 0), goal_cell: (5, 5), distractor_cells: vec![], steps: 0 }).unwrap();
        // moving north from the top row is a no-op
        let step = g.step(DiscreteAction::new(0, 4).unwrap()).unwrap();
        assert_eq!(g.state().agent_cell, (0, 0));
        assert!((step.reward - (-0.1 * 10.0 / 36.0)).abs() < 1e-15);
        assert!((step.reward + 0.02778).abs() < 1e-5);
        assert!(!step.done());
    }

    #[test]
    fn reaching_the_goal_terminates() {
        let mut g = env(6, 4);
        g.set_state(GridWorldState { agent_cell: (4, 5), goal_cell: (5, 5), distractor_cells: vec![], steps: 0 }).unwrap();
        let step = g.step(DiscreteAction::new(1, 4).unwrap()).unwrap();
        assert_eq!(step.reward, 1.0);
        assert!(step.done() && step.terminal && step.success);
        assert!(matches!(g.step(DiscreteAction::new(0, 4).unwrap()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn reward_bounds_hold_everywhere() {
        let g = env(6, 4);
        for cell in g.spawn_cells() {
            let r = g.reward_at(cell);
            assert!(-0.1 <= r && r < 0.0);
        }
        assert_eq!(g.reward_at((5, 5)), 1.0);
    }

    #[test]
    fn max_steps_truncates() {
        let mut cfg = GridWorldConfig::new(6, 4);
        cfg.max_steps = 3;
        let mut g = GridWorld::new(cfg).unwrap();
        g.reset();
        g.set_state(GridWorldState { agent_cell: (0, 0), goal_cell: (5, 5), distractor_cells: vec![], steps: 0 }).unwrap();
        for i in 0..3 {
            let s = g.step(DiscreteAction::new(3, 4).unwrap()).unwrap();
            assert_eq!(s.truncated, i == 2);
            assert!(!s.terminal);
        }
    }

    #[test]
    fn spawn_is_reproducible_and_avoids_goal() {
        let mut a = env(6, 4);
        let mut b = env(6, 4);
        for _ in 0..50 {
            assert_eq!(a.reset(), b.reset());
            assert_eq!(a.state(), b.state());
            assert_ne!(a.state().agent_cell, a.state().goal_cell);
        }
    }

    #[test]
    fn degenerate_grid_forces_spawn() {
        let mut cfg = GridWorldConfig::new(2, 4);
        cfg.grid_rows = Some(1);
        let mut g = GridWorld::new(cfg).unwrap();
        for _ in 0..5 {
            g.reset();
            assert_eq!(g.state().agent_cell, (0, 0));
            assert_eq!(g.state().goal_cell, (0, 1));
        }
    }

    #[test]
    fn bfs_distances() {
        let mut four = env(6, 4);
        let mut eight = env(6, 8);
        assert_eq!(four.optimal_steps_from((0, 0)).unwrap(), 10);
        assert_eq!(eight.optimal_steps_from((0, 0)).unwrap(), 5);
        four.set_state(GridWorldState { agent_cell: (5, 5), goal_cell: (5, 5), distractor_cells: vec![], steps: 0 }).unwrap();
        assert_eq!(four.optimal_steps().unwrap(), 0);
        eight.set_state(GridWorldState { agent_cell: (2, 0), goal_cell: (5, 5), distractor_cells: vec![], steps: 0 }).unwrap();
        assert_eq!(eight.optimal_steps().unwrap(), 5);
        // Manhattan distance is the 4-action optimum on an open grid
        for cell in four.spawn_cells() {
            assert_eq!(four.optimal_steps_from(cell).unwrap(), manhattan(cell, (5, 5)));
        }
    }

    #[test]
    fn render_is_deterministic_and_markers_fit_cells() {
        let g = env(6, 4);
        let cfg = g.config().clone();
        assert_eq!(cell_box(&cfg, (0, 0)), (1, 1, 8));
        for cell in g.spawn_cells() {
            let obs = g.observe_cell(cell);
            assert_eq!(obs, g.observe_cell(cell));
            let (y0, x0, s) = cell_box(&cfg, cell);
            let agent = colored_pixels(&obs, raster::RED);
            assert!(!agent.is_empty());
            assert!(agent.iter().all(|&(y, x)| (y0..y0 + s).contains(&y) && (x0..x0 + s).contains(&x)));
            let (gy, gx, _) = cell_box(&cfg, (5, 5));
            let goal = colored_pixels(&obs, raster::GREEN);
            assert!(goal.iter().all(|&(y, x)| (gy..gy + s).contains(&y) && (gx..gx + s).contains(&x)));
            let centroid = |p: &[(usize, usize)]| {
                let n = p.len() as f64;
                (p.iter().map(|v| v.0 as f64).sum::<f64>() / n, p.iter().map(|v| v.1 as f64).sum::<f64>() / n)
            };
            let (ay, ax) = centroid(&agent);
            let (qy, qx) = centroid(&goal);
            let cell_of = |y: f64, x: f64| (((y - 1.0) / 8.0) as usize, ((x - 1.0) / 8.0) as usize);
            assert_eq!(cell_of(ay, ax), cell);
            assert_eq!(cell_of(qy, qx), (5, 5));
        }
    }

    #[test]
    fn rendering_is_injective_without_distractors() {
        for (n, k) in [(6, 4), (14, 8), (5, 4)] {
            let g = env(n, k);
            let images: std::collections::HashSet<Observation> = g.cells().iter().map(|c| g.observe_cell(*c)).collect();
            assert_eq!(images.len(), n * n);
        }
    }

    #[test]
    fn distractors_render_as_circles_and_avoid_agent_and_goal() {
        let mut cfg = GridWorldConfig::new(5, 4);
        cfg.n_distractors = 3;
        let mut g = GridWorld::new(cfg).unwrap();
        let mut obs = g.reset();
        for t in 0..200 {
            let st = g.state().clone();
            assert_eq!(st.distractor_cells.len(), 3);
            let mut seen = st.distractor_cells.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 3);
            assert!(st.distractor_cells.iter().all(|c| *c != st.agent_cell && *c != st.goal_cell));
            for color in &raster::DISTRACTOR_COLORS[..3] {
                assert!(!colored_pixels(&obs, *color).is_empty());
            }
            if g.is_done() {
                obs = g.reset();
            } else {
                obs = g.step(DiscreteAction::new(t % 4, 4).unwrap()).unwrap().observation;
            }
        }
    }

    #[test]
    fn trajectories_are_reproducible_with_distractors() {
        let mut cfg = GridWorldConfig::new(5, 4);
        cfg.n_distractors = 2;
        cfg.seed = 9;
        let run = || {
            let mut g = GridWorld::new(cfg.clone()).unwrap();
            let mut frames = vec![g.reset()];
            for t in 0..40 {
                if g.is_done() {
                    frames.push(g.reset());
                } else {
                    frames.push(g.step(DiscreteAction::new((t * 7) % 4, 4).unwrap()).unwrap().observation);
                }
            }
            frames
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(GridWorld::new(GridWorldConfig::new(6, 5)).is_err());
        let mut cfg = GridWorldConfig::new(6, 4);
        cfg.image_size = 4;
        assert!(GridWorld::new(cfg).is_err());
    }
}
