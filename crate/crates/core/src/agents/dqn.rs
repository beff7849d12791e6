//! Epsilon-greedy Q-learning over latent states with a hard-copied target.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::batch::{stack, LatentTransition};
use crate::error::{Error, Result};
use crate::nets::policy::q_network_spec;
use crate::nets::{argmax, Adam, AdamConfig, Mlp, ParamVector};
use crate::rng::{self, derive_seed, Rng};
use crate::types::{DiscreteAction, LatentState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub target_update_period: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon: 0.25,
            learning_rate: 5e-4,
            target_update_period: 1000,
            batch_size: 64,
            replay_capacity: 100_000,
            warmup_steps: 1000,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("DQN needs 0 < gamma < 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config("DQN epsilon must lie in [0, 1]".into()));
        }
        if self.target_update_period == 0 || self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("DQN target period, batch size and capacity must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("DQN learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `r + gamma (1 - done) max_a q_next[a]`.
pub fn dqn_target_value(r: f64, gamma: f64, done: bool, q_next: &[f64]) -> f64 {
    if done {
        r
    } else {
        r + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Dqn {
    pub config: DqnConfig,
    pub q: Mlp,
    pub q_target: Mlp,
    adam: Adam,
    updates: usize,
    rng: Rng,
}

impl Dqn {
    pub fn new(state_dim: usize, n_actions: usize, config: DqnConfig) -> Result<Self> {
        config.validate()?;
        let q = Mlp::new(q_network_spec(state_dim, n_actions), derive_seed(config.seed, "dqn.q"));
        Ok(Self {
            adam: Adam::new(AdamConfig::with_lr(config.learning_rate), q.n_params()),
            q_target: q.clone(),
            q,
            updates: 0,
            rng: rng::seeded(config.seed, "dqn.explore"),
            config,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.q.spec().outputs
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn q_values(&self, s: &LatentState) -> Vec<f64> {
        self.q.forward_one(s.as_slice())
    }

    pub fn greedy(&self, s: &LatentState) -> DiscreteAction {
        DiscreteAction::new(argmax(&self.q_values(s)), self.n_actions()).expect("argmax within range")
    }

    /// Uniform action with probability epsilon when exploring, else greedy.
    pub fn act(&mut self, s: &LatentState, explore: bool) -> DiscreteAction {
        if explore && self.rng.random::<f64>() < self.config.epsilon {
            let k = self.n_actions();
            return DiscreteAction::new(self.rng.random_range(0..k), k).expect("index within range");
        }
        self.greedy(s)
    }

    /// One regression step on `(y - Q(s, a))^2`; copies the target network
    /// every `target_update_period` updates. Returns the batch loss.
    pub fn update(&mut self, batch: &[LatentTransition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Underfilled { available: 0, requested: 1 });
        }
        let st = stack(batch);
        let n = batch.len() as f64;
        let q_next = self.q_target.forward(st.s_next.view());
        let cache = self.q.forward_cached(st.s.view());
        let q = cache.output();
        let mut d_out = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let a = st.action[[i, 0]] as usize;
            let y = dqn_target_value(st.r[i], self.config.gamma, st.done[i], q_next.row(i).as_slice().expect("row-major"));
            let diff = q[[i, a]] - y;
            loss += diff * diff / n;
            d_out[[i, a]] = 2.0 * diff / n;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged("non-finite DQN loss".into()));
        }
        let mut grad = self.q.params().zeros_like();
        self.q.backward_params(&cache, d_out.view(), &mut grad);
        self.adam.step(self.q.params_mut().data_mut(), &grad);
        self.updates += 1;
        if self.updates % self.config.target_update_period == 0 {
            self.q_target.params_mut().soft_update(self.q.params(), 1.0);
        }
        Ok(loss)
    }

    pub fn networks(&self) -> Vec<(&'static str, &ParamVector)> {
        vec![("q", self.q.params()), ("q_target", self.q_target.params())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_formula() {
        assert!((dqn_target_value(0.5, 0.9, false, &[1.0, 3.0, -2.0]) - 3.2).abs() < 1e-12);
        assert_eq!(dqn_target_value(0.5, 0.9, true, &[1.0, 3.0]), 0.5);
    }

    #[test]
    fn epsilon_extremes() {
        let s = LatentState(vec![0.2; 4]);
        let mut greedy = Dqn::new(4, 8, DqnConfig { epsilon: 0.0, ..Default::default() }).unwrap();
        let best = greedy.greedy(&s);
        assert!((0..50).all(|_| greedy.act(&s, true) == best));
        let mut random = Dqn::new(4, 8, DqnConfig { epsilon: 1.0, ..Default::default() }).unwrap();
        let mut seen = [false; 8];
        for _ in 0..400 {
            seen[random.act(&s, true).index()] = true;
        }
        assert!(seen.iter().all(|&v| v));
    }

    #[test]
    fn hard_copy_period() {
        let mut agent = Dqn::new(3, 2, DqnConfig { target_update_period: 3, ..Default::default() }).unwrap();
        let batch: Vec<_> = (0..8)
            .map(|i| LatentTransition {
                s: vec![i as f64 * 0.1, 0.2, -0.3],
                action: vec![(i % 2) as f64],
                r: 1.0,
                s_next: vec![0.0, 0.1, i as f64 * 0.05],
                done: i == 7,
            })
            .collect();
        let initial = agent.q_target.params().clone();
        for step in 1..=6 {
            agent.update(&batch).unwrap();
            if step % 3 == 0 {
                assert_eq!(agent.q_target.params(), agent.q.params());
            } else if step < 3 {
                assert_eq!(agent.q_target.params(), &initial);
            } else {
                assert_ne!(agent.q_target.params(), agent.q.params());
            }
        }
    }

    #[test]
    fn learns_a_bandit() {
        let mut agent = Dqn::new(2, 3, DqnConfig { learning_rate: 1e-3, ..Default::default() }).unwrap();
        let batch: Vec<_> = (0..30)
            .map(|i| LatentTransition {
                s: vec![0.5, -0.5],
                action: vec![(i % 3) as f64],
                r: if i % 3 == 1 { 1.0 } else { 0.0 },
                s_next: vec![0.0, 0.0],
                done: true,
            })
            .collect();
        for _ in 0..300 {
            agent.update(&batch).unwrap();
        }
        assert_eq!(agent.greedy(&LatentState(vec![0.5, -0.5])).index(), 1);
    }
}
