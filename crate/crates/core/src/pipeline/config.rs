//! Declarative experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, Budget};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::repr::ReprConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_transitions: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_transitions: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub budget: Budget,
    /// Greedy evaluation episodes per seed after training.
    pub eval_episodes: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { budget: Budget::steps(30_000), eval_episodes: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Principal components in the latent map (2 or 3).
    pub components: usize,
    /// Sampled states in the latent dump; 0 enumerates every grid cell.
    pub dump_samples: usize,
    pub smoothing_window: usize,
    pub final_window: usize,
    pub best_k: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { components: 2, dump_samples: 2000, smoothing_window: 50, final_window: 50, best_k: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub repr: ReprConfig,
    pub agent: AgentConfig,
    pub policy: PolicyConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "experiment".into(),
            output_dir: PathBuf::from("runs/experiment"),
            seeds: vec![0, 1, 2],
            env: EnvConfig::default(),
            data: DataConfig::default(),
            repr: ReprConfig::default(),
            agent: AgentConfig::default(),
            policy: PolicyConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.data.n_transitions == 0 {
            return Err(Error::Config("cannot collect an empty dataset".into()));
        }
        self.env.validate()?;
        self.repr.validate()?;
        self.agent.validate()?;
        self.policy.budget.validate()?;
        if self.policy.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        let a = &self.analysis;
        if !(a.components == 2 || a.components == 3) {
            return Err(Error::Config("analysis.components must be 2 or 3".into()));
        }
        if a.best_k == 0 || a.best_k > self.seeds.len() {
            return Err(Error::Config(format!("analysis.best_k must lie in 1..={}", self.seeds.len())));
        }
        if a.smoothing_window == 0 || a.final_window == 0 {
            return Err(Error::Config("analysis windows must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses TOML, then applies `key.path=value` overrides. Values are read
    /// as TOML literals, falling back to plain strings.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format("config", e.message()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::format("config", e.message()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("config", e.to_string()))
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{assignment}`: `{key}` is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_literal(raw.trim()));
    Ok(())
}
