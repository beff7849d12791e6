//! Minibatch training of the representation networks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::baseline::Baseline;
use super::losses::{evaluate, BundleGrad, LossBreakdown, LossOptions, LossWeights};
use crate::error::{Error, Result};
use crate::nets::{Adam, AdamConfig, BundleSpec, Checkpoint, EncoderSpec, ModelBundle};
use crate::replay::draw_negatives;
use crate::rng::{self, derive_seed};
use crate::types::Transition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub baseline: Baseline,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    /// Replaces the standard convolutional encoder (used for small images).
    pub encoder: Option<EncoderSpec>,
    pub stop_target_gradient: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            weights: LossWeights::default(),
            learning_rate: 5e-4,
            batch_size: 256,
            epochs: 100,
            baseline: Baseline::Ours,
            state_dim: 10,
            action_dim: 5,
            hidden: vec![64, 32],
            encoder: None,
            stop_target_gradient: false,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("learning_rate, batch_size and epochs must be positive".into()));
        }
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Loss weights after disabling the terms the baseline does not use.
    pub fn effective_weights(&self) -> LossWeights {
        self.baseline.weights(self.weights)
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions { weights: self.effective_weights(), stop_target_gradient: self.stop_target_gradient }
    }

    pub fn bundle_spec(&self, image_size: usize, n_actions: usize) -> BundleSpec {
        let wiring = self.baseline.wiring();
        let encoder = match &self.encoder {
            Some(e) => EncoderSpec { latent_dim: self.state_dim, ..e.clone() },
            None => EncoderSpec::standard(image_size, self.state_dim),
        };
        BundleSpec {
            encoder,
            n_actions,
            action_dim: self.action_dim,
            hidden: self.hidden.clone(),
            use_action_encoder: wiring.use_action_encoder,
            state_free_action_encoder: wiring.state_free_action_encoder,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// Mean loss components over the minibatches of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct ReprOutcome {
    pub bundle: ModelBundle,
    pub curve: Vec<EpochLosses>,
    /// Whole-dataset losses before the first update and after the last one.
    pub initial: LossBreakdown,
    pub final_losses: LossBreakdown,
}

impl ReprOutcome {
    pub fn checkpoint(&self, fingerprint: &str, config: &ReprConfig) -> Result<Checkpoint> {
        self.bundle.to_checkpoint(fingerprint, serde_json::to_value(config)?)
    }

    /// CSV with header `epoch,L_T,L_R,L_c,L_delta,total`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,L_T,L_R,L_c,L_delta,total\n");
        for e in &self.curve {
            let l = e.losses;
            out.push_str(&format!("{},{},{},{},{},{}\n", e.epoch, l.transition, l.reward, l.contrastive, l.decoder, l.total));
        }
        out
    }
}

/// Losses over the whole dataset in chunks, with negatives drawn from a
/// stream fixed by `seed` so repeated evaluations are comparable.
pub fn evaluate_dataset(bundle: &ModelBundle, dataset: &[Transition], options: &LossOptions, seed: u64) -> Result<LossBreakdown> {
    if dataset.is_empty() {
        return Err(Error::Underfilled { available: 0, requested: 1 });
    }
    let mut rng = rng::seeded(seed, "repr.evaluation");
    let mut sum = LossBreakdown::default();
    for chunk in dataset.chunks(256) {
        let negatives = draw_negatives(dataset.len(), |i| &dataset[i].o_next, chunk, &mut rng);
        let l = evaluate(bundle, chunk, &negatives, options, None)?.losses;
        let k = chunk.len() as f64;
        sum.transition += k * l.transition;
        sum.reward += k * l.reward;
        sum.contrastive += k * l.contrastive;
        sum.decoder += k * l.decoder;
        sum.total += k * l.total;
    }
    let n = dataset.len() as f64;
    Ok(LossBreakdown {
        transition: sum.transition / n,
        reward: sum.reward / n,
        contrastive: sum.contrastive / n,
        decoder: sum.decoder / n,
        total: sum.total / n,
    })
}

/// Runs `epochs` passes of minibatch Adam over a fixed dataset.
pub fn train_representation(config: &ReprConfig, dataset: &[Transition]) -> Result<ReprOutcome> {
    config.validate()?;
    if dataset.len() < config.batch_size {
        return Err(Error::Underfilled { available: dataset.len(), requested: config.batch_size });
    }
    let first = &dataset[0];
    if first.o.height() != first.o.width() && config.encoder.is_none() {
        return Err(Error::Shape("the standard encoder expects square observations".into()));
    }
    let spec = config.bundle_spec(first.o.height(), first.a.n_actions());
    let mut bundle = ModelBundle::new(spec, derive_seed(config.seed, "repr.init"))?;
    let options = config.loss_options();
    let mut adams: Vec<Adam> = bundle.networks().iter().map(|(_, p)| Adam::new(config.adam(), p.len())).collect();
    let mut batch_rng = rng::seeded(config.seed, "repr.batches");
    let mut negative_rng = rng::seeded(config.seed, "repr.negatives");
    let eval_seed = derive_seed(config.seed, "repr.evaluation");

    let initial = evaluate_dataset(&bundle, dataset, &options, eval_seed)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut batch_rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for idx in order.chunks_exact(config.batch_size) {
            let batch: Vec<Transition> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let negatives = draw_negatives(dataset.len(), |i| &dataset[i].o_next, &batch, &mut negative_rng);
            let mut grad = BundleGrad::zeros(&bundle);
            let l = evaluate(&bundle, &batch, &negatives, &options, Some(&mut grad))?.losses;
            if !l.total.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged(format!("non-finite representation loss at epoch {epoch}")));
            }
            for ((adam, (_, params)), g) in adams.iter_mut().zip(bundle.networks_mut()).zip(grad.slices()) {
                adam.step(params.data_mut(), g);
            }
            sum.transition += l.transition;
            sum.reward += l.reward;
            sum.contrastive += l.contrastive;
            sum.decoder += l.decoder;
            sum.total += l.total;
            batches += 1;
        }
        let n = batches as f64;
        let losses = LossBreakdown {
            transition: sum.transition / n,
            reward: sum.reward / n,
            contrastive: sum.contrastive / n,
            decoder: sum.decoder / n,
            total: sum.total / n,
        };
        log::info!(
            "repr epoch {epoch}/{}: L_T {:.5} L_R {:.5} L_c {:.5} L_delta {:.5} total {:.5}",
            config.epochs,
            losses.transition,
            losses.reward,
            losses.contrastive,
            losses.decoder,
            losses.total
        );
        curve.push(EpochLosses { epoch, losses });
    }
    if !bundle.is_finite() {
        return Err(Error::Diverged("non-finite representation parameters".into()));
    }
    let final_losses = evaluate_dataset(&bundle, dataset, &options, eval_seed)?;
    Ok(ReprOutcome { bundle, curve, initial, final_losses })
}
