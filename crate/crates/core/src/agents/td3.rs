//! Twin-critic deterministic actor-critic on latent states and actions.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batch::{stack, LatentTransition};
use crate::error::{Error, Result};
use crate::nets::policy::{actor_spec, critic_spec};
use crate::nets::{concat_cols, Adam, AdamConfig, Mlp, ModelBundle, ParamVector};
use crate::rng::{self, derive_seed, Rng};
use crate::types::{DiscreteAction, LatentAction, LatentState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    pub sigma_explore: f64,
    pub sigma_target: f64,
    pub clip_c: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps taken with uniformly random latent actions before
    /// the first update.
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            sigma_explore: 0.35,
            sigma_target: 0.2,
            clip_c: 0.5,
            lr_actor: 5e-4,
            lr_critic: 5e-4,
            batch_size: 64,
            replay_capacity: 100_000,
            warmup_steps: 1000,
            seed: 0,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("TD3 needs 0 < gamma < 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("TD3 needs 0 < tau <= 1".into()));
        }
        if !(self.clip_c > 0.0) || self.sigma_explore < 0.0 || self.sigma_target < 0.0 {
            return Err(Error::Config("TD3 needs c > 0 and non-negative noise scales".into()));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("TD3 policy_delay, batch_size and replay_capacity must be positive".into()));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return Err(Error::Config("TD3 learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Bootstrapped target `r + gamma (1 - done) min(q1, q2)`.
pub fn td3_target_value(r: f64, gamma: f64, done: bool, q1: f64, q2: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * q1.min(q2)
    }
}

/// Something that scores latent state-action pairs and can differentiate
/// its score with respect to the action.
pub trait ActionValue {
    /// Values per row and `d value / d action` per row.
    fn value_and_action_grad(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>);
}

impl ActionValue for Mlp {
    fn value_and_action_grad(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let cache = self.forward_cached(concat_cols(states, actions).view());
        let q = cache.output().column(0).to_vec();
        let ones = Array2::ones((states.nrows(), 1));
        let dx = self.input_gradient(&cache, ones.view());
        (q, dx.slice(s![.., states.ncols()..]).to_owned())
    }
}

/// Deterministic policy gradient of `mean_i Q(s_i, actor(s_i))` with
/// respect to the actor parameters.
pub fn actor_gradient(actor: &Mlp, states: ArrayView2<f64>, critic: &dyn ActionValue) -> (f64, Vec<f64>) {
    let n = states.nrows() as f64;
    let cache = actor.forward_cached(states);
    let (q, dq_da) = critic.value_and_action_grad(states, cache.output().view());
    let mut grad = actor.params().zeros_like();
    actor.backward_params(&cache, (dq_da / n).view(), &mut grad);
    (q.iter().sum::<f64>() / n, grad)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Td3Losses {
    pub critic1: f64,
    pub critic2: f64,
    /// Present on steps where the actor was updated.
    pub actor: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Td3 {
    pub config: Td3Config,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub actor_target: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    adam_actor: Adam,
    adam_critic1: Adam,
    adam_critic2: Adam,
    updates: usize,
    noise_rng: Rng,
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

impl Td3 {
    pub fn new(state_dim: usize, action_dim: usize, config: Td3Config) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let actor = Mlp::new(actor_spec(state_dim, action_dim), derive_seed(seed, "td3.actor"));
        let critic1 = Mlp::new(critic_spec(state_dim, action_dim), derive_seed(seed, "td3.critic1"));
        let critic2 = Mlp::new(critic_spec(state_dim, action_dim), derive_seed(seed, "td3.critic2"));
        Ok(Self {
            adam_actor: Adam::new(AdamConfig::with_lr(config.lr_actor), actor.n_params()),
            adam_critic1: Adam::new(AdamConfig::with_lr(config.lr_critic), critic1.n_params()),
            adam_critic2: Adam::new(AdamConfig::with_lr(config.lr_critic), critic2.n_params()),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            updates: 0,
            noise_rng: rng::seeded(seed, "td3.noise"),
            config,
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn action_dim(&self) -> usize {
        self.actor.spec().outputs
    }

    /// `clip(actor(s) + explore * N(0, sigma), -1, 1)`.
    pub fn act_latent(&mut self, s: &LatentState, explore: bool) -> LatentAction {
        let mut a = self.actor.forward_one(s.as_slice());
        if explore {
            if let Some(noise) = normal(self.config.sigma_explore) {
                for v in &mut a {
                    *v += noise.sample(&mut self.noise_rng);
                }
            }
        }
        LatentAction::clipped(a)
    }

    /// Latent action plus its decoded discrete action.
    pub fn act(&mut self, s: &LatentState, explore: bool, bundle: &ModelBundle) -> Result<(LatentAction, DiscreteAction)> {
        let latent = self.act_latent(s, explore);
        let discrete = bundle.decode(&latent)?;
        Ok((latent, discrete))
    }

    /// Smoothed target-policy actions `clip(actor'(s') + clip(N(0, sigma~), -c, c), -1, 1)`.
    pub fn target_actions(&mut self, s_next: ArrayView2<f64>) -> Array2<f64> {
        let mut a = self.actor_target.forward(s_next);
        if let Some(noise) = normal(self.config.sigma_target) {
            let c = self.config.clip_c;
            a.mapv_inplace(|v| v + noise.sample(&mut self.noise_rng).clamp(-c, c));
        }
        a.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        a
    }

    /// Critic regression targets for a batch.
    pub fn td3_target(&mut self, batch: &[LatentTransition]) -> Vec<f64> {
        let st = stack(batch);
        let a_next = self.target_actions(st.s_next.view());
        let q1 = self.critic1_target.forward(concat_cols(st.s_next.view(), a_next.view()).view());
        let q2 = self.critic2_target.forward(concat_cols(st.s_next.view(), a_next.view()).view());
        (0..batch.len()).map(|i| td3_target_value(st.r[i], self.config.gamma, st.done[i], q1[[i, 0]], q2[[i, 0]])).collect()
    }

    /// One critic step, and on every `policy_delay`-th call an actor step
    /// followed by soft target updates.
    pub fn update(&mut self, batch: &[LatentTransition]) -> Result<Td3Losses> {
        if batch.is_empty() {
            return Err(Error::Underfilled { available: 0, requested: 1 });
        }
        let y = self.td3_target(batch);
        let st = stack(batch);
        let n = batch.len() as f64;
        let x = concat_cols(st.s.view(), st.action.view());
        let mut losses = Td3Losses::default();
        for (critic, adam, loss) in [
            (&mut self.critic1, &mut self.adam_critic1, &mut losses.critic1),
            (&mut self.critic2, &mut self.adam_critic2, &mut losses.critic2),
        ] {
            let cache = critic.forward_cached(x.view());
            let q = cache.output();
            let diff = Array2::from_shape_fn((batch.len(), 1), |(i, _)| q[[i, 0]] - y[i]);
            *loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            let mut grad = critic.params().zeros_like();
            critic.backward_params(&cache, (diff * (2.0 / n)).view(), &mut grad);
            adam.step(critic.params_mut().data_mut(), &grad);
        }
        if !(losses.critic1.is_finite() && losses.critic2.is_finite()) {
            return Err(Error::Diverged("non-finite critic loss".into()));
        }
        self.updates += 1;
        if self.updates % self.config.policy_delay == 0 {
            let (mean_q, grad) = actor_gradient(&self.actor, st.s.view(), &self.critic1);
            if !mean_q.is_finite() {
                return Err(Error::Diverged("non-finite actor objective".into()));
            }
            // ascend the critic: descend its negation
            let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
            self.adam_actor.step(self.actor.params_mut().data_mut(), &descent);
            losses.actor = Some(-mean_q);
            self.soft_update_targets();
        }
        Ok(losses)
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.config.tau;
        self.actor_target.params_mut().soft_update(self.actor.params(), tau);
        self.critic1_target.params_mut().soft_update(self.critic1.params(), tau);
        self.critic2_target.params_mut().soft_update(self.critic2.params(), tau);
    }

    pub fn networks(&self) -> Vec<(&'static str, &ParamVector)> {
        vec![
            ("actor", self.actor.params()),
            ("critic1", self.critic1.params()),
            ("critic2", self.critic2.params()),
            ("actor_target", self.actor_target.params()),
            ("critic1_target", self.critic1_target.params()),
            ("critic2_target", self.critic2_target.params()),
        ]
    }
}

/// Mean of the batch's critic values, used in tests and diagnostics.
pub fn mean_q(critic: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> f64 {
    let q = critic.forward(concat_cols(states, actions).view());
    q.mean_axis(Axis(0)).expect("non-empty")[0]
}

#[cfg(test)]
mod tests {
    use ndarray::Array1;
    use rand::Rng as _;

    use super::*;

    fn random_batch(n: usize, seed: u64, d: usize, m: usize) -> Vec<LatentTransition> {
        let mut rng = rng::seeded(seed, "test");
        (0..n)
            .map(|i| LatentTransition {
                s: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
                r: rng.random_range(-1.0..1.0),
                s_next: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: i % 5 == 0,
            })
            .collect()
    }

    #[test]
    fn target_formula() {
        assert!((td3_target_value(1.0, 0.99, false, 2.0, 1.5) - 2.485).abs() < 1e-12);
        assert_eq!(td3_target_value(1.0, 0.99, true, 2.0, 1.5), 1.0);
    }

    #[test]
    fn targets_never_exceed_single_critic_bound() {
        let mut agent = Td3::new(4, 2, Td3Config { sigma_target: 0.0, ..Default::default() }).unwrap();
        let batch = random_batch(32, 1, 4, 2);
        let y = agent.td3_target(&batch);
        let st = stack(&batch);
        let a = agent.actor_target.forward(st.s_next.view());
        let q1 = agent.critic1_target.forward(concat_cols(st.s_next.view(), a.view()).view());
        for i in 0..32 {
            let bound = if st.done[i] { st.r[i] } else { st.r[i] + 0.99 * q1[[i, 0]] };
            assert!(y[i] <= bound + 1e-15);
        }
    }

    #[test]
    fn zero_target_noise_uses_target_actor() {
        let mut agent = Td3::new(4, 2, Td3Config { sigma_target: 0.0, clip_c: 123.0, ..Default::default() }).unwrap();
        let batch = random_batch(8, 2, 4, 2);
        let st = stack(&batch);
        assert_eq!(agent.target_actions(st.s_next.view()), agent.actor_target.forward(st.s_next.view()));
    }

    #[test]
    fn acting() {
        let mut agent = Td3::new(10, 5, Td3Config::default()).unwrap();
        let s = LatentState(vec![0.4; 10]);
        assert_eq!(agent.act_latent(&s, false), agent.act_latent(&s, false));
        for _ in 0..100 {
            let a = agent.act_latent(&s, true);
            assert!(a.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let mut silent = Td3::new(10, 5, Td3Config { sigma_explore: 0.0, ..Default::default() }).unwrap();
        assert_eq!(silent.act_latent(&s, true), silent.act_latent(&s, false));
    }

    #[test]
    fn tau_one_copies_and_soft_update_is_convex() {
        let mut agent = Td3::new(4, 2, Td3Config { tau: 1.0, policy_delay: 1, ..Default::default() }).unwrap();
        agent.update(&random_batch(16, 3, 4, 2)).unwrap();
        assert_eq!(agent.actor_target.params(), agent.actor.params());
        assert_eq!(agent.critic2_target.params(), agent.critic2.params());

        let tau = 0.3;
        let mut agent = Td3::new(4, 2, Td3Config { tau, policy_delay: 1, ..Default::default() }).unwrap();
        let old = agent.critic1_target.params().data().to_vec();
        agent.update(&random_batch(16, 4, 4, 2)).unwrap();
        let online = agent.critic1.params().data();
        for ((new, old), on) in agent.critic1_target.params().data().iter().zip(&old).zip(online) {
            assert_eq!(*new, tau * on + (1.0 - tau) * old);
        }
    }

    #[test]
    fn actor_updates_on_even_steps_only() {
        let mut agent = Td3::new(4, 2, Td3Config::default()).unwrap();
        let batch = random_batch(16, 5, 4, 2);
        for step in 1..=6 {
            let before = agent.actor.params().clone();
            let l = agent.update(&batch).unwrap();
            assert_eq!(l.actor.is_some(), step % 2 == 0);
            assert_eq!(agent.actor.params() == &before, step % 2 == 1);
        }
    }

    #[test]
    fn critic_loss_zero_on_perfect_targets() {
        let mut agent = Td3::new(3, 2, Td3Config { sigma_target: 0.0, ..Default::default() }).unwrap();
        // zero every critic so Q == 0, and make rewards match
        for c in [&mut agent.critic1, &mut agent.critic2, &mut agent.critic1_target, &mut agent.critic2_target] {
            c.params_mut().data_mut().fill(0.0);
        }
        let batch: Vec<_> = random_batch(8, 6, 3, 2).into_iter().map(|t| LatentTransition { r: 0.0, ..t }).collect();
        let l = agent.update(&batch).unwrap();
        assert_eq!((l.critic1, l.critic2), (0.0, 0.0));
    }

    struct Quadratic {
        target: Array1<f64>,
        scale: Array1<f64>,
    }

    impl ActionValue for Quadratic {
        fn value_and_action_grad(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
            let mut q = Vec::new();
            let mut g = Array2::zeros(actions.raw_dim());
            for (i, a) in actions.rows().into_iter().enumerate() {
                let shift = states[[i, 0]];
                let mut v = 0.0;
                for j in 0..a.len() {
                    let e = a[j] - self.target[j] - 0.1 * shift;
                    v -= self.scale[j] * e * e;
                    g[[i, j]] = -2.0 * self.scale[j] * e;
                }
                q.push(v);
            }
            (q, g)
        }
    }

    #[test]
    fn deterministic_policy_gradient_matches_finite_differences() {
        let critic = Quadratic { target: Array1::from(vec![0.3, -0.5, 0.1]), scale: Array1::from(vec![1.0, 2.0, 0.5]) };
        let actor = Mlp::new(crate::nets::MlpSpec::new(4, &[6, 5], 3, crate::nets::Activation::Tanh), 7);
        let states = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let (_, analytic) = actor_gradient(&actor, states.view(), &critic);
        let mut probe = actor.clone();
        let h = 1e-5;
        let objective = |m: &Mlp| {
            let (q, _) = critic.value_and_action_grad(states.view(), m.forward(states.view()).view());
            q.iter().sum::<f64>() / 5.0
        };
        for j in 0..analytic.len() {
            let orig = probe.params().data()[j];
            probe.params_mut().data_mut()[j] = orig + h;
            let plus = objective(&probe);
            probe.params_mut().data_mut()[j] = orig - h;
            let minus = objective(&probe);
            probe.params_mut().data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {j}: {numeric} vs {}", analytic[j]);
        }
    }
}
