//! Latent-space control: TD3 through the action decoder and a DQN baseline.

mod batch;
pub mod dqn;
pub mod td3;
pub mod train;

pub use batch::{stack, LatentTransition, Stacked};
pub use dqn::{dqn_target_value, Dqn, DqnConfig};
pub use td3::{actor_gradient, td3_target_value, ActionValue, Td3, Td3Config, Td3Losses};
pub use train::{
    evaluate_policy, metrics_csv, parse_metrics_csv, train_policy, train_policy_with, Agent, AgentConfig, Budget,
    EpisodeRecord, LatentCache, PolicyOutcome, METRICS_HEADER, POLICY_CHECKPOINT_KIND,
};
