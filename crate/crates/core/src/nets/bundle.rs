use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dense::{Activation, Mlp, MlpSpec};
use super::encoder::{Encoder, EncoderSpec};
use super::checkpoint::Checkpoint;
use super::{argmax, softmax_rows};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::types::{DiscreteAction, LatentAction, LatentState, Observation};

pub const CHECKPOINT_KIND: &str = "representation";

/// Dimensions and wiring of the five representation networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub encoder: EncoderSpec,
    pub n_actions: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    /// Without an action encoder the transition and reward models consume
    /// the one-hot action directly.
    pub use_action_encoder: bool,
    /// Action encoder sees only the action (its state input is zeroed).
    pub state_free_action_encoder: bool,
}

impl BundleSpec {
    /// Latent state 10, latent action 5, hidden widths 64 and 32.
    pub fn standard(image_size: usize, n_actions: usize) -> Self {
        Self {
            encoder: EncoderSpec::standard(image_size, 10),
            n_actions,
            action_dim: 5,
            hidden: vec![64, 32],
            use_action_encoder: true,
            state_free_action_encoder: false,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    /// Width of the action input seen by the transition and reward models.
    pub fn model_action_dim(&self) -> usize {
        if self.use_action_encoder {
            self.action_dim
        } else {
            self.n_actions
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 || self.action_dim == 0 || self.state_dim() == 0 {
            return Err(Error::Config("bundle dimensions must be positive".into()));
        }
        self.encoder.flatten_dim().map(|_| ())
    }

    fn action_encoder_spec(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim() + self.n_actions, &self.hidden, self.action_dim, Activation::Tanh)
    }

    fn action_decoder_spec(&self) -> MlpSpec {
        MlpSpec::new(self.action_dim, &self.hidden, self.n_actions, Activation::Identity)
    }

    fn transition_spec(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim() + self.model_action_dim(), &self.hidden, self.state_dim(), Activation::Identity)
    }

    fn reward_spec(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim() + self.model_action_dim(), &self.hidden, 1, Activation::Identity)
    }
}

/// The learned homomorphism: encoder, action encoder/decoder, latent
/// transition and reward models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub spec: BundleSpec,
    pub encoder: Encoder,
    pub action_encoder: Option<Mlp>,
    /// Produces logits; probabilities are their softmax.
    pub action_decoder: Option<Mlp>,
    /// Predicts the residual; the next latent state is `s + delta`.
    pub transition: Mlp,
    pub reward: Mlp,
}

impl ModelBundle {
    pub fn new(spec: BundleSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let encoder = Encoder::new(spec.encoder.clone(), derive_seed(seed, "encoder"))?;
        let (action_encoder, action_decoder) = if spec.use_action_encoder {
            (
                Some(Mlp::new(spec.action_encoder_spec(), derive_seed(seed, "action_encoder"))),
                Some(Mlp::new(spec.action_decoder_spec(), derive_seed(seed, "action_decoder"))),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            transition: Mlp::new(spec.transition_spec(), derive_seed(seed, "transition")),
            reward: Mlp::new(spec.reward_spec(), derive_seed(seed, "reward")),
            spec,
            encoder,
            action_encoder,
            action_decoder,
        })
    }

    /// Reassembles a bundle from stored parameter vectors.
    pub fn from_networks(
        spec: BundleSpec,
        encoder: super::ParamVector,
        action_encoder: Option<super::ParamVector>,
        action_decoder: Option<super::ParamVector>,
        transition: super::ParamVector,
        reward: super::ParamVector,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.use_action_encoder != (action_encoder.is_some() && action_decoder.is_some()) {
            return Err(Error::Shape("action encoder presence does not match the architecture".into()));
        }
        Ok(Self {
            encoder: Encoder::from_params(spec.encoder.clone(), encoder)?,
            action_encoder: action_encoder.map(|p| Mlp::from_params(spec.action_encoder_spec(), p)).transpose()?,
            action_decoder: action_decoder.map(|p| Mlp::from_params(spec.action_decoder_spec(), p)).transpose()?,
            transition: Mlp::from_params(spec.transition_spec(), transition)?,
            reward: Mlp::from_params(spec.reward_spec(), reward)?,
            spec,
        })
    }

    /// `(name, parameters)` for every network present, in a fixed order.
    pub fn networks(&self) -> Vec<(&'static str, &super::ParamVector)> {
        let mut out = vec![("encoder", self.encoder.params())];
        if let (Some(e), Some(d)) = (&self.action_encoder, &self.action_decoder) {
            out.push(("action_encoder", e.params()));
            out.push(("action_decoder", d.params()));
        }
        out.push(("transition", self.transition.params()));
        out.push(("reward", self.reward.params()));
        out
    }

    /// Mutable parameters in the same order as [`ModelBundle::networks`].
    pub fn networks_mut(&mut self) -> Vec<(&'static str, &mut super::ParamVector)> {
        let mut out = vec![("encoder", self.encoder.params_mut())];
        if let (Some(e), Some(d)) = (&mut self.action_encoder, &mut self.action_decoder) {
            out.push(("action_encoder", e.params_mut()));
            out.push(("action_decoder", d.params_mut()));
        }
        out.push(("transition", self.transition.params_mut()));
        out.push(("reward", self.reward.params_mut()));
        out
    }

    /// Packs the bundle into a checkpoint; `training` records how it was made.
    pub fn to_checkpoint(&self, fingerprint: &str, training: serde_json::Value) -> Result<Checkpoint> {
        let config = serde_json::json!({ "bundle": serde_json::to_value(&self.spec)?, "training": training });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, fingerprint, config);
        for (name, params) in self.networks() {
            ck.insert(name, params.clone());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::format("checkpoint", format!("expected a `{CHECKPOINT_KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let spec: BundleSpec = serde_json::from_value(ck.config["bundle"].clone())?;
        Self::from_networks(
            spec,
            ck.require("encoder")?.clone(),
            ck.get("action_encoder").cloned(),
            ck.get("action_decoder").cloned(),
            ck.require("transition")?.clone(),
            ck.require("reward")?.clone(),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    pub fn encode(&self, observations: &[&Observation]) -> Result<Vec<LatentState>> {
        let z = self.encoder.forward(observations)?;
        Ok(z.rows().into_iter().map(|r| LatentState(r.to_vec())).collect())
    }

    pub fn encode_one(&self, observation: &Observation) -> Result<LatentState> {
        Ok(self.encode(&[observation])?.pop().expect("one row"))
    }

    /// Input rows for the action encoder: `[s | one_hot(a)]`, with `s`
    /// zeroed for the state-free variant.
    pub fn action_encoder_input(&self, states: ArrayView2<f64>, actions: &[usize]) -> Array2<f64> {
        let n = states.nrows();
        let k = self.spec.n_actions;
        let d = self.state_dim();
        let mut input = Array2::zeros((n, d + k));
        for i in 0..n {
            if !self.spec.state_free_action_encoder {
                for j in 0..d {
                    input[[i, j]] = states[[i, j]];
                }
            }
            input[[i, d + actions[i]]] = 1.0;
        }
        input
    }

    pub fn one_hot_rows(&self, actions: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((actions.len(), self.spec.n_actions));
        for (i, &a) in actions.iter().enumerate() {
            m[[i, a]] = 1.0;
        }
        m
    }

    /// Actions as seen by the transition/reward models: latent actions when
    /// the action encoder is active, one-hot rows otherwise.
    pub fn model_actions(&self, states: ArrayView2<f64>, actions: &[usize]) -> Array2<f64> {
        match &self.action_encoder {
            Some(psi) => psi.forward(self.action_encoder_input(states, actions).view()),
            None => self.one_hot_rows(actions),
        }
    }

    fn check_state(&self, s: &LatentState) -> Result<()> {
        if s.dim() != self.state_dim() {
            return Err(Error::Shape(format!("latent state has {} entries, expected {}", s.dim(), self.state_dim())));
        }
        Ok(())
    }

    fn require_action_encoder(&self) -> Result<(&Mlp, &Mlp)> {
        match (&self.action_encoder, &self.action_decoder) {
            (Some(e), Some(d)) => Ok((e, d)),
            _ => Err(Error::Config("this bundle has no action encoder/decoder".into())),
        }
    }

    pub fn encode_action(&self, s: &LatentState, a: DiscreteAction) -> Result<LatentAction> {
        self.check_state(s)?;
        if a.n_actions() != self.spec.n_actions {
            return Err(Error::Shape(format!("action space of {} actions, expected {}", a.n_actions(), self.spec.n_actions)));
        }
        let (psi, _) = self.require_action_encoder()?;
        let states = ArrayView2::from_shape((1, s.dim()), s.as_slice()).expect("row");
        let out = psi.forward(self.action_encoder_input(states, &[a.index()]).view());
        Ok(LatentAction::clipped(out.row(0).to_vec()))
    }

    /// Decoder probabilities over the `K` discrete actions.
    pub fn decode_probs(&self, a: &LatentAction) -> Result<Vec<f64>> {
        let (_, delta) = self.require_action_encoder()?;
        if a.dim() != self.spec.action_dim {
            return Err(Error::Shape(format!("latent action has {} entries, expected {}", a.dim(), self.spec.action_dim)));
        }
        let logits = delta.forward_one(a.as_slice());
        let view = ArrayView2::from_shape((1, logits.len()), &logits).expect("row");
        Ok(softmax_rows(view).row(0).to_vec())
    }

    /// Decoding rule at the environment boundary: argmax, lowest index on ties.
    pub fn decode(&self, a: &LatentAction) -> Result<DiscreteAction> {
        let probs = self.decode_probs(a)?;
        DiscreteAction::new(argmax(&probs), self.spec.n_actions)
    }

    fn model_input(&self, s: &LatentState, a: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if a.len() != self.spec.model_action_dim() {
            return Err(Error::Shape(format!(
                "model action input has {} entries, expected {}",
                a.len(),
                self.spec.model_action_dim()
            )));
        }
        let mut x = s.0.clone();
        x.extend_from_slice(a);
        Ok(x)
    }

    pub fn transition_delta(&self, s: &LatentState, a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transition.forward_one(&self.model_input(s, a)?))
    }

    /// Residual latent transition `s + delta(s, a)`.
    pub fn predict_next(&self, s: &LatentState, a: &[f64]) -> Result<LatentState> {
        let delta = self.transition_delta(s, a)?;
        Ok(LatentState(s.0.iter().zip(delta).map(|(x, d)| x + d).collect()))
    }

    pub fn predict_reward(&self, s: &LatentState, a: &[f64]) -> Result<f64> {
        Ok(self.reward.forward_one(&self.model_input(s, a)?)[0])
    }

    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|(_, p)| p.is_finite())
    }
}
