//! Policy learning on top of a frozen representation.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::batch::LatentTransition;
use super::dqn::{Dqn, DqnConfig};
use super::td3::{Td3, Td3Config};
use crate::envs::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nets::{Checkpoint, ModelBundle};
use crate::replay::ReplayBuffer;
use crate::rng::{self, derive_seed};
use crate::types::{DiscreteAction, LatentAction, LatentState, Observation};

/// Distinct observations remembered before the latent cache is flushed.
const LATENT_CACHE_LIMIT: usize = 200_000;

pub const POLICY_CHECKPOINT_KIND: &str = "policy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentConfig {
    Td3(Td3Config),
    Dqn(DqnConfig),
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig::Td3(Td3Config::default())
    }
}

impl AgentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AgentConfig::Td3(_) => "td3",
            AgentConfig::Dqn(_) => "dqn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AgentConfig::Td3(c) => c.validate(),
            AgentConfig::Dqn(c) => c.validate(),
        }
    }

    fn batch_size(&self) -> usize {
        match self {
            AgentConfig::Td3(c) => c.batch_size,
            AgentConfig::Dqn(c) => c.batch_size,
        }
    }

    fn warmup_steps(&self) -> usize {
        match self {
            AgentConfig::Td3(c) => c.warmup_steps,
            AgentConfig::Dqn(c) => c.warmup_steps,
        }
    }

    fn replay_capacity(&self) -> usize {
        match self {
            AgentConfig::Td3(c) => c.replay_capacity,
            AgentConfig::Dqn(c) => c.replay_capacity,
        }
    }

    /// Copy with the agent seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            AgentConfig::Td3(c) => c.seed = seed,
            AgentConfig::Dqn(c) => c.seed = seed,
        }
        out
    }
}

/// Stops training at whichever limit is hit first. An episode cut short by
/// the step limit is not reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub max_episodes: Option<usize>,
    pub max_steps: Option<usize>,
}

impl Budget {
    pub fn episodes(n: usize) -> Self {
        Self { max_episodes: Some(n), max_steps: None }
    }

    pub fn steps(n: usize) -> Self {
        Self { max_episodes: None, max_steps: Some(n) }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.max_episodes, self.max_steps) {
            (None, None) => Err(Error::Config("policy budget needs max_episodes or max_steps".into())),
            (Some(0), _) | (_, Some(0)) => Err(Error::Config("policy budget limits must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
}

pub const METRICS_HEADER: &str = "seed,episode,steps,return,success";

pub fn metrics_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.seed, r.episode, r.steps, r.ret, u8::from(r.success)).expect("string write");
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpisodeRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::format("metrics csv", format!("expected header `{METRICS_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::format("metrics csv", format!("row {}: bad {what}", i + 1));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(bad("field count"));
            }
            Ok(EpisodeRecord {
                seed: f[0].parse().map_err(|_| bad("seed"))?,
                episode: f[1].parse().map_err(|_| bad("episode"))?,
                steps: f[2].parse().map_err(|_| bad("steps"))?,
                ret: f[3].parse().map_err(|_| bad("return"))?,
                success: match f[4] {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(bad("success")),
                },
            })
        })
        .collect()
}

/// A trained agent of either kind.
#[derive(Clone, Debug)]
pub enum Agent {
    Td3(Td3),
    Dqn(Dqn),
}

impl Agent {
    pub fn new(config: &AgentConfig, bundle: &ModelBundle) -> Result<Self> {
        Ok(match config {
            AgentConfig::Td3(c) => {
                if bundle.action_decoder.is_none() {
                    return Err(Error::Config("TD3 needs a representation with an action decoder".into()));
                }
                Agent::Td3(Td3::new(bundle.state_dim(), bundle.spec.action_dim, c.clone())?)
            }
            AgentConfig::Dqn(c) => Agent::Dqn(Dqn::new(bundle.state_dim(), bundle.spec.n_actions, c.clone())?),
        })
    }

    /// Discrete action plus the stored action vector (latent action for TD3,
    /// `[index]` for DQN).
    pub fn act(&mut self, s: &LatentState, explore: bool, bundle: &ModelBundle) -> Result<(DiscreteAction, Vec<f64>)> {
        match self {
            Agent::Td3(agent) => {
                let (latent, a) = agent.act(s, explore, bundle)?;
                Ok((a, latent.into_inner()))
            }
            Agent::Dqn(agent) => {
                let a = agent.act(s, explore);
                Ok((a, vec![a.index() as f64]))
            }
        }
    }

    pub fn update(&mut self, batch: &[LatentTransition]) -> Result<()> {
        match self {
            Agent::Td3(agent) => agent.update(batch).map(|_| ()),
            Agent::Dqn(agent) => agent.update(batch).map(|_| ()),
        }
    }

    pub fn to_checkpoint(&self, fingerprint: &str, config: &AgentConfig, bundle: &ModelBundle) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "agent": serde_json::to_value(config)?,
            "state_dim": bundle.state_dim(),
            "action_dim": bundle.spec.action_dim,
            "n_actions": bundle.spec.n_actions,
        });
        let mut ck = Checkpoint::new(POLICY_CHECKPOINT_KIND, fingerprint, meta);
        let nets = match self {
            Agent::Td3(a) => a.networks(),
            Agent::Dqn(a) => a.networks(),
        };
        for (name, params) in nets {
            ck.insert(name, params.clone());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, AgentConfig)> {
        if ck.kind != POLICY_CHECKPOINT_KIND {
            return Err(Error::format("checkpoint", format!("expected a `{POLICY_CHECKPOINT_KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let config: AgentConfig = serde_json::from_value(ck.config["agent"].clone())?;
        let dim = |key: &str| {
            ck.config[key].as_u64().map(|v| v as usize).ok_or_else(|| Error::format("checkpoint", format!("missing `{key}`")))
        };
        let state_dim = dim("state_dim")?;
        let load = |net: &mut crate::nets::Mlp, name: &str| -> Result<()> {
            let params = ck.require(name)?;
            if !params.same_layout(net.params()) {
                return Err(Error::Shape(format!("policy network `{name}` has an unexpected layout")));
            }
            *net.params_mut() = params.clone();
            Ok(())
        };
        let agent = match &config {
            AgentConfig::Td3(c) => {
                let mut a = Td3::new(state_dim, dim("action_dim")?, c.clone())?;
                load(&mut a.actor, "actor")?;
                load(&mut a.critic1, "critic1")?;
                load(&mut a.critic2, "critic2")?;
                load(&mut a.actor_target, "actor_target")?;
                load(&mut a.critic1_target, "critic1_target")?;
                load(&mut a.critic2_target, "critic2_target")?;
                Agent::Td3(a)
            }
            AgentConfig::Dqn(c) => {
                let mut a = Dqn::new(state_dim, dim("n_actions")?, c.clone())?;
                load(&mut a.q, "q")?;
                load(&mut a.q_target, "q_target")?;
                Agent::Dqn(a)
            }
        };
        Ok((agent, config))
    }
}

/// Memoized encoder: identical images map to the same latent state.
pub struct LatentCache<'a> {
    bundle: &'a ModelBundle,
    cache: HashMap<Observation, LatentState>,
}

impl<'a> LatentCache<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Self {
        Self { bundle, cache: HashMap::new() }
    }

    pub fn encode(&mut self, o: &Observation) -> Result<LatentState> {
        if let Some(s) = self.cache.get(o) {
            return Ok(s.clone());
        }
        if self.cache.len() >= LATENT_CACHE_LIMIT {
            self.cache.clear();
        }
        let s = self.bundle.encode_one(o)?;
        self.cache.insert(o.clone(), s.clone());
        Ok(s)
    }
}

fn check_dimensions(env: &EnvConfig, bundle: &ModelBundle) -> Result<()> {
    let spec = &bundle.spec;
    if spec.encoder.height != env.image_size() || spec.encoder.width != env.image_size() {
        return Err(Error::Shape(format!(
            "representation expects {}x{} images, environment renders {}x{}",
            spec.encoder.height,
            spec.encoder.width,
            env.image_size(),
            env.image_size()
        )));
    }
    if spec.n_actions != env.n_actions() {
        return Err(Error::Shape(format!(
            "representation was trained for {} actions, environment has {}",
            spec.n_actions,
            env.n_actions()
        )));
    }
    Ok(())
}

pub struct PolicyOutcome {
    pub records: Vec<EpisodeRecord>,
    pub agent: Agent,
    pub env_steps: usize,
}

/// Trains one agent with run seed `seed`, which overrides the agent and
/// environment seeds. The bundle is only read.
pub fn train_policy(
    env: &EnvConfig,
    bundle: &ModelBundle,
    config: &AgentConfig,
    budget: Budget,
    seed: u64,
) -> Result<PolicyOutcome> {
    train_policy_with(env, bundle, config, budget, seed, |_| {})
}

/// As [`train_policy`], calling `on_episode` after every finished episode.
pub fn train_policy_with(
    env: &EnvConfig,
    bundle: &ModelBundle,
    config: &AgentConfig,
    budget: Budget,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<PolicyOutcome> {
    env.validate()?;
    config.validate()?;
    budget.validate()?;
    check_dimensions(env, bundle)?;
    let config = config.with_seed(derive_seed(seed, "policy.agent"));
    let mut agent = Agent::new(&config, bundle)?;
    let mut env = env.with_seed(derive_seed(seed, "policy.env")).build()?;
    let mut replay = ReplayBuffer::new(config.replay_capacity(), derive_seed(seed, "policy.replay"));
    let mut warmup_rng = rng::seeded(seed, "policy.warmup");
    let mut latents = LatentCache::new(bundle);
    let (warmup, batch_size) = (config.warmup_steps(), config.batch_size());
    let n_actions = env.n_actions();

    let mut records = Vec::new();
    let mut total_steps = 0usize;
    'episodes: loop {
        if budget.max_episodes.is_some_and(|m| records.len() >= m) {
            break;
        }
        let mut s = latents.encode(&env.reset())?;
        let (mut steps, mut ret) = (0usize, 0.0);
        loop {
            if budget.max_steps.is_some_and(|m| total_steps >= m) {
                break 'episodes;
            }
            let (a, stored) = if total_steps < warmup {
                random_action(&agent, bundle, n_actions, &mut warmup_rng)?
            } else {
                agent.act(&s, true, bundle)?
            };
            let step = env.step(a)?;
            let s_next = latents.encode(&step.observation)?;
            replay.push(LatentTransition {
                s: s.0.clone(),
                action: stored,
                r: step.reward,
                s_next: s_next.0.clone(),
                done: step.terminal,
            });
            total_steps += 1;
            steps += 1;
            ret += step.reward;
            if total_steps >= warmup && replay.len() >= batch_size {
                let batch = replay.sample_batch(batch_size)?;
                agent.update(&batch)?;
            }
            if step.done() {
                let record = EpisodeRecord { seed, episode: records.len(), steps, ret, success: step.success };
                on_episode(&record);
                records.push(record);
                break;
            }
            s = s_next;
        }
    }
    Ok(PolicyOutcome { records, agent, env_steps: total_steps })
}

fn random_action(
    agent: &Agent,
    bundle: &ModelBundle,
    n_actions: usize,
    rng: &mut crate::rng::Rng,
) -> Result<(DiscreteAction, Vec<f64>)> {
    match agent {
        Agent::Td3(td3) => {
            let latent: Vec<f64> = (0..td3.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let latent = LatentAction::clipped(latent);
            let a = bundle.decode(&latent)?;
            Ok((a, latent.into_inner()))
        }
        Agent::Dqn(_) => {
            let a = DiscreteAction::new(rng.random_range(0..n_actions), n_actions)?;
            Ok((a, vec![a.index() as f64]))
        }
    }
}

/// Greedy rollouts of a trained agent; no learning takes place.
pub fn evaluate_policy(
    env: &EnvConfig,
    bundle: &ModelBundle,
    agent: &mut Agent,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    check_dimensions(env, bundle)?;
    let mut env: Box<dyn Environment> = env.with_seed(derive_seed(seed, "policy.eval")).build()?;
    let mut latents = LatentCache::new(bundle);
    let mut records = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut o = env.reset();
        let (mut steps, mut ret) = (0usize, 0.0);
        loop {
            let s = latents.encode(&o)?;
            let (a, _) = agent.act(&s, false, bundle)?;
            let step = env.step(a)?;
            steps += 1;
            ret += step.reward;
            if step.done() {
                records.push(EpisodeRecord { seed, episode, steps, ret, success: step.success });
                break;
            }
            o = step.observation;
        }
    }
    Ok(records)
}
