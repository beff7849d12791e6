//! Deterministic tabular MDPs, exact policy evaluation and value iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::GridWorld;
use crate::error::{Error, Result};

pub const VI_TOLERANCE: f64 = 1e-12;
const VI_MAX_SWEEPS: usize = 10_000_000;
/// Q-values this close to the best count as ties.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `next[s * n_actions + a]`.
    pub next: Vec<usize>,
    /// `reward[s * n_actions + a]`.
    pub reward: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, next: Vec<usize>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        let m = Self { n_states, n_actions, next, reward, gamma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states * self.n_actions;
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Config("an MDP needs at least one state and one action".into()));
        }
        if self.next.len() != n || self.reward.len() != n {
            return Err(Error::Shape(format!("transition and reward tables need {n} entries")));
        }
        if let Some(&bad) = self.next.iter().find(|&&s| s >= self.n_states) {
            return Err(Error::Config(format!("transition target {bad} is not a state")));
        }
        if !self.reward.iter().all(|r| r.is_finite()) {
            return Err(Error::Config("rewards must be finite".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("discount must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn t(&self, s: usize, a: usize) -> usize {
        self.next[s * self.n_actions + a]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn q_from_values(&self, v: &[f64], s: usize, a: usize) -> f64 {
        self.r(s, a) + self.gamma * v[self.t(s, a)]
    }

    /// Grid world as a tabular MDP over cells; the goal cell is absorbing
    /// with zero reward.
    pub fn from_grid(world: &GridWorld, gamma: f64) -> Result<Self> {
        let config = world.config();
        let cells = world.cells();
        let goal = config.goal_cell();
        let index = |c: (usize, usize)| c.0 * config.cols() + c.1;
        let k = config.n_actions;
        let mut next = Vec::with_capacity(cells.len() * k);
        let mut reward = Vec::with_capacity(cells.len() * k);
        for &cell in &cells {
            for a in 0..k {
                if cell == goal {
                    next.push(index(cell));
                    reward.push(0.0);
                } else {
                    let to = world.move_cell(cell, a);
                    next.push(index(to));
                    reward.push(world.reward_at(to));
                }
            }
        }
        Self::new(cells.len(), k, next, reward, gamma)
    }

    /// Exact `V^pi` for a deterministic policy via a linear solve.
    pub fn evaluate_policy(&self, policy: &[usize]) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            let act = policy[s];
            a[(s, self.t(s, act))] -= self.gamma;
            b[s] = self.r(s, act);
        }
        let v = a.lu().solve(&b).ok_or_else(|| Error::Config("singular policy-evaluation system".into()))?;
        Ok(v.iter().copied().collect())
    }

    fn check_policy(&self, policy: &[usize]) -> Result<()> {
        if policy.len() != self.n_states {
            return Err(Error::Shape(format!("policy covers {} of {} states", policy.len(), self.n_states)));
        }
        if let Some(&a) = policy.iter().find(|&&a| a >= self.n_actions) {
            return Err(Error::ActionOutOfRange { index: a, n_actions: self.n_actions });
        }
        Ok(())
    }

    /// Greedy policy with respect to `v`, lowest index among ties.
    pub fn greedy(&self, v: &[f64]) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let q: Vec<f64> = (0..self.n_actions).map(|a| self.q_from_values(v, s, a)).collect();
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                q.iter().position(|&x| x >= best - TIE_TOLERANCE).expect("non-empty")
            })
            .collect()
    }

    /// Bellman optimality sweeps until the sup-norm change drops below 1e-12.
    pub fn value_iteration(&self) -> (Vec<f64>, Vec<usize>) {
        let mut v = vec![0.0; self.n_states];
        for _ in 0..VI_MAX_SWEEPS {
            let mut residual: f64 = 0.0;
            let updated: Vec<f64> = (0..self.n_states)
                .map(|s| {
                    let best = (0..self.n_actions).map(|a| self.q_from_values(&v, s, a)).fold(f64::NEG_INFINITY, f64::max);
                    residual = residual.max((best - v[s]).abs());
                    best
                })
                .collect();
            v = updated;
            if residual < VI_TOLERANCE {
                let policy = self.greedy(&v);
                return (v, policy);
            }
        }
        log::warn!("value iteration stopped after {VI_MAX_SWEEPS} sweeps without reaching {VI_TOLERANCE}");
        let policy = self.greedy(&v);
        (v, policy)
    }

    /// Whitespace-separated text: `n_states n_actions gamma`, then the
    /// transition table (one row of targets per state), then the reward
    /// table. `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n_states, self.n_actions, self.gamma);
        for s in 0..self.n_states {
            let row: Vec<String> = (0..self.n_actions).map(|a| self.t(s, a).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        for s in 0..self.n_states {
            let row: Vec<String> = (0..self.n_actions).map(|a| format!("{:?}", self.r(s, a))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text, "mdp file");
        let n_states = tokens.parse()?;
        let n_actions = tokens.parse()?;
        let gamma = tokens.parse()?;
        let next = (0..n_states * n_actions).map(|_| tokens.parse()).collect::<Result<_>>()?;
        let reward = (0..n_states * n_actions).map(|_| tokens.parse()).collect::<Result<_>>()?;
        tokens.finish()?;
        Self::new(n_states, n_actions, next, reward, gamma)
    }
}

/// Token stream over a comment-stripped text file.
pub(crate) struct Tokens<'a> {
    items: Vec<&'a str>,
    pos: usize,
    context: &'static str,
}

impl<'a> Tokens<'a> {
    pub fn new(text: &'a str, context: &'static str) -> Self {
        let items = text.lines().flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace()).collect();
        Self { items, pos: 0, context }
    }

    pub fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let tok = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::format(self.context, format!("unexpected end after {} values", self.pos)))?;
        self.pos += 1;
        tok.parse().map_err(|_| Error::format(self.context, format!("cannot parse `{tok}` (value {})", self.pos)))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.items.len() {
            return Err(Error::format(self.context, format!("{} trailing values", self.items.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridWorldConfig;

    #[test]
    fn single_state_geometric_series() {
        let m = TabularMdp::new(1, 2, vec![0, 0], vec![1.0, 1.0], 0.9).unwrap();
        let (v, pi) = m.value_iteration();
        assert!((v[0] - 10.0).abs() < 1e-10);
        assert_eq!(pi, vec![0]);
        assert!((m.evaluate_policy(&[1]).unwrap()[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn two_state_chain() {
        // state 1 is absorbing and pays 1 per step; state 0 can only move there
        let m = TabularMdp::new(2, 1, vec![1, 1], vec![0.0, 1.0], 0.8).unwrap();
        let (v, _) = m.value_iteration();
        assert!((v[0] - 0.8 * v[1]).abs() < 1e-10);
        assert!((v[1] - 5.0).abs() < 1e-10);
    }

    fn grid3() -> TabularMdp {
        let world = GridWorld::new(GridWorldConfig { grid_n: 3, n_actions: 4, image_size: 30, ..Default::default() }).unwrap();
        TabularMdp::from_grid(&world, 0.9).unwrap()
    }

    #[test]
    fn value_iteration_matches_policy_enumeration() {
        let m = grid3();
        let (v_star, pi_star) = m.value_iteration();
        let mut best = vec![f64::NEG_INFINITY; m.n_states];
        let total = m.n_actions.pow(m.n_states as u32);
        for code in 0..total {
            let mut c = code;
            let policy: Vec<usize> = (0..m.n_states)
                .map(|_| {
                    let a = c % m.n_actions;
                    c /= m.n_actions;
                    a
                })
                .collect();
            for (b, v) in best.iter_mut().zip(m.evaluate_policy(&policy).unwrap()) {
                *b = b.max(v);
            }
        }
        for s in 0..m.n_states {
            assert!((best[s] - v_star[s]).abs() < 1e-10, "state {s}: {} vs {}", best[s], v_star[s]);
        }
        let v_pi = m.evaluate_policy(&pi_star).unwrap();
        assert!(v_pi.iter().zip(&v_star).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn ties_break_toward_lowest_index() {
        // from the top-left corner S and E are both optimal towards the bottom-right goal
        let m = grid3();
        let (_, pi) = m.value_iteration();
        assert_eq!(pi[0], 1);
        // goal state: every action is a self-loop
        assert_eq!(pi[8], 0);
    }

    #[test]
    fn text_round_trip() {
        let m = grid3();
        let back = TabularMdp::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let commented = "# tiny\n1 1 0.5 # header\n0\n2.5\n";
        assert_eq!(TabularMdp::from_text(commented).unwrap().reward, vec![2.5]);
        assert!(TabularMdp::from_text("1 1 0.5\n3\n0\n").is_err());
        assert!(TabularMdp::from_text("1 1 0.5\n0\n0\n7\n").is_err());
    }
}
