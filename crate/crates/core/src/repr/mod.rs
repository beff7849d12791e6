//! Representation learning: losses, baseline configurations and the trainer.

pub mod baseline;
pub mod gradcheck;
pub mod losses;
pub mod train;

pub use baseline::{configure_baseline, Baseline, Wiring};
pub use losses::{
    batch_states, contrastive_loss, decoder_loss, evaluate, evaluate_detached, reward_loss, total_loss, transition_loss, BundleGrad, LossBreakdown,
    LossEval, LossOptions, LossWeights,
};
pub use train::{evaluate_dataset, train_representation, EpochLosses, ReprConfig, ReprOutcome};
