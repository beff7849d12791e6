//! The representation objective and its analytic gradient.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{softmax_rows, ModelBundle};
use crate::types::{Observation, Transition};

/// Floor applied to decoder probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_t: f64,
    pub w_r: f64,
    pub w_c: f64,
    pub w_delta: f64,
    pub hinge_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_t: 1.0, w_r: 1.0, w_c: 1.0, w_delta: 1.0, hinge_eps: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { w_t: 0.0, w_r: 0.0, w_c: 0.0, w_delta: 0.0, hinge_eps: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_t, self.w_r, self.w_c, self.w_delta];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.hinge_eps.is_finite() && self.hinge_eps > 0.0) {
            return Err(Error::Config("hinge_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn combine(&self, l: &LossBreakdown) -> f64 {
        self.w_t * l.transition + self.w_r * l.reward + self.w_c * l.contrastive + self.w_delta * l.decoder
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub transition: f64,
    pub reward: f64,
    pub contrastive: f64,
    pub decoder: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub weights: LossWeights,
    /// Blocks the encoder gradient through the target `phi(o')`.
    pub stop_target_gradient: bool,
}

impl LossOptions {
    pub fn new(weights: LossWeights) -> Self {
        Self { weights, stop_target_gradient: false }
    }
}

/// Per-network gradients, laid out like [`ModelBundle::networks`].
#[derive(Clone, Debug, PartialEq)]
pub struct BundleGrad {
    pub encoder: Vec<f64>,
    pub action_encoder: Option<Vec<f64>>,
    pub action_decoder: Option<Vec<f64>>,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
}

impl BundleGrad {
    pub fn zeros(bundle: &ModelBundle) -> Self {
        Self {
            encoder: bundle.encoder.params().zeros_like(),
            action_encoder: bundle.action_encoder.as_ref().map(|m| m.params().zeros_like()),
            action_decoder: bundle.action_decoder.as_ref().map(|m| m.params().zeros_like()),
            transition: bundle.transition.params().zeros_like(),
            reward: bundle.reward.params().zeros_like(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.encoder.as_slice()];
        if let (Some(e), Some(d)) = (&self.action_encoder, &self.action_decoder) {
            out.push(e);
            out.push(d);
        }
        out.push(&self.transition);
        out.push(&self.reward);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Loss values together with a fingerprint of every non-smooth branch taken
/// (ReLU gates, hinge activity, signs of reward errors). Two parameter
/// settings with equal signatures lie in the same smooth piece of the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub losses: LossBreakdown,
    pub signature: u64,
}

/// Mean Euclidean distance between matching rows.
pub fn transition_error(target: ArrayView2<f64>, prediction: ArrayView2<f64>) -> f64 {
    row_distances(target, prediction).iter().sum::<f64>() / target.nrows() as f64
}

/// Mean absolute reward error.
pub fn reward_error(rewards: &[f64], predicted: &[f64]) -> f64 {
    rewards.iter().zip(predicted).map(|(r, p)| (r - p).abs()).sum::<f64>() / rewards.len() as f64
}

/// Mean hinge `max(0, eps - ||negative - prediction||)`.
pub fn hinge_error(negatives: ArrayView2<f64>, prediction: ArrayView2<f64>, eps: f64) -> f64 {
    mean_hinge(&row_distances(negatives, prediction), eps)
}

/// Rounding in the mean can otherwise land an ulp above `eps`.
fn mean_hinge(distances: &[f64], eps: f64) -> f64 {
    let sum: f64 = distances.iter().map(|d| (eps - d).max(0.0)).sum();
    (sum / distances.len() as f64).clamp(0.0, eps)
}

/// Mean cross-entropy of `probs` rows against the true action indices.
pub fn cross_entropy(probs: ArrayView2<f64>, actions: &[usize]) -> f64 {
    actions.iter().enumerate().map(|(i, &a)| -probs[[i, a]].max(LOG_CLAMP).ln()).sum::<f64>() / actions.len() as f64
}

fn row_distances(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Vec<f64> {
    a.rows().into_iter().zip(b.rows()).map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()).collect()
}

/// Distinct observations of a batch and, per role, the row each maps to.
struct Unique<'a> {
    images: Vec<&'a Observation>,
    o: Vec<usize>,
    o_next: Vec<usize>,
    negatives: Vec<usize>,
}

fn dedupe<'a>(batch: &'a [Transition], negatives: &'a [Observation]) -> Unique<'a> {
    let mut by_ptr: HashMap<*const u8, usize> = HashMap::new();
    let mut by_content: HashMap<&'a Observation, usize> = HashMap::new();
    let mut images = Vec::new();
    let mut index = |obs: &'a Observation| -> usize {
        let ptr = obs.pixels().as_ptr();
        if let Some(&i) = by_ptr.get(&ptr) {
            return i;
        }
        let i = *by_content.entry(obs).or_insert_with(|| {
            images.push(obs);
            images.len() - 1
        });
        by_ptr.insert(ptr, i);
        i
    };
    let o = batch.iter().map(|t| index(&t.o)).collect();
    let o_next = batch.iter().map(|t| index(&t.o_next)).collect();
    let negatives = negatives.iter().map(&mut index).collect();
    Unique { images, o, o_next, negatives }
}

fn hash_flags(flags: impl Iterator<Item = bool>, hasher: &mut impl Hasher) {
    for f in flags {
        f.hash(hasher);
    }
}

/// Evaluates all four losses and, when `grad` is given, accumulates the
/// gradient of the weighted total into it.
///
/// The decoder loss reaches the action encoder but not the observation
/// encoder: the latent state fed to the action encoder is treated as a
/// constant on that path. The decoder only receives gradient from its own
/// loss.
pub fn evaluate(
    bundle: &ModelBundle,
    batch: &[Transition],
    negatives: &[Observation],
    options: &LossOptions,
    grad: Option<&mut BundleGrad>,
) -> Result<LossEval> {
    evaluate_detached(bundle, batch, negatives, options, grad, None)
}

/// Latent states of the batch's current observations.
pub fn batch_states(bundle: &ModelBundle, batch: &[Transition]) -> Result<Array2<f64>> {
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.o).collect();
    bundle.encoder.forward(&obs)
}

/// As [`evaluate`], optionally feeding the decoder path fixed latent states
/// instead of the encoder's output. With the states the encoder currently
/// produces this changes nothing; under parameter perturbations it gives the
/// function whose derivative the stopped gradient of the decoder path is.
pub fn evaluate_detached(
    bundle: &ModelBundle,
    batch: &[Transition],
    negatives: &[Observation],
    options: &LossOptions,
    grad: Option<&mut BundleGrad>,
    decoder_states: Option<ArrayView2<f64>>,
) -> Result<LossEval> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Underfilled { available: 0, requested: 1 });
    }
    let need_negatives = options.weights.w_c > 0.0 || !negatives.is_empty();
    if need_negatives && negatives.len() != b {
        return Err(Error::Shape(format!("{} negatives for a batch of {b}", negatives.len())));
    }
    for t in batch {
        if t.a.n_actions() != bundle.spec.n_actions {
            return Err(Error::Shape(format!("action space of {} actions, expected {}", t.a.n_actions(), bundle.spec.n_actions)));
        }
    }
    let w = options.weights;
    let d = bundle.state_dim();
    let bf = b as f64;
    let mut sig = DefaultHasher::new();

    let unique = dedupe(batch, negatives);
    let enc_cache = bundle.encoder.forward_cached(&unique.images)?;
    enc_cache.hash_gates(&mut sig);
    let z = enc_cache.output();
    let s = z.select(Axis(0), &unique.o);
    let s_next = z.select(Axis(0), &unique.o_next);
    let actions: Vec<usize> = batch.iter().map(|t| t.a.index()).collect();
    let rewards: Vec<f64> = batch.iter().map(|t| t.r).collect();

    let psi_cache = bundle.action_encoder.as_ref().map(|psi| psi.forward_cached(bundle.action_encoder_input(s.view(), &actions).view()));
    let a_bar = match &psi_cache {
        Some(c) => {
            c.hash_gates(&mut sig);
            c.output().clone()
        }
        None => bundle.one_hot_rows(&actions),
    };
    let model_in = ndarray::concatenate![Axis(1), s, a_bar];
    let t_cache = bundle.transition.forward_cached(model_in.view());
    let r_cache = bundle.reward.forward_cached(model_in.view());
    t_cache.hash_gates(&mut sig);
    r_cache.hash_gates(&mut sig);
    let prediction = &s + t_cache.output();
    let r_hat = r_cache.output().column(0).to_vec();

    // transition
    let diff = &s_next - &prediction;
    let t_norms: Vec<f64> = diff.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let l_t = t_norms.iter().sum::<f64>() / bf;
    hash_flags(t_norms.iter().map(|n| *n == 0.0), &mut sig);

    // reward
    let r_err: Vec<f64> = rewards.iter().zip(&r_hat).map(|(r, p)| r - p).collect();
    let l_r = r_err.iter().map(|e| e.abs()).sum::<f64>() / bf;
    hash_flags(r_err.iter().flat_map(|e| [*e > 0.0, *e < 0.0]), &mut sig);

    // contrastive
    let (l_c, neg_diff, neg_dist) = if unique.negatives.is_empty() {
        (0.0, None, Vec::new())
    } else {
        let n = z.select(Axis(0), &unique.negatives);
        let m = &n - &prediction;
        let dist: Vec<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let l = mean_hinge(&dist, w.hinge_eps);
        hash_flags(dist.iter().map(|v| w.hinge_eps - v > 0.0), &mut sig);
        hash_flags(dist.iter().map(|v| *v == 0.0), &mut sig);
        (l, Some(m), dist)
    };

    // decoder
    let detached_psi = match (&bundle.action_encoder, decoder_states) {
        (Some(psi), Some(states)) => {
            if states.dim() != (b, d) {
                return Err(Error::Shape("detached decoder states do not match the batch".into()));
            }
            let c = psi.forward_cached(bundle.action_encoder_input(states, &actions).view());
            c.hash_gates(&mut sig);
            Some(c)
        }
        _ => None,
    };
    let a_bar_dec = detached_psi.as_ref().map_or(&a_bar, |c| c.output());
    let dec = bundle.action_decoder.as_ref().map(|delta| {
        let cache = delta.forward_cached(a_bar_dec.view());
        cache.hash_gates(&mut sig);
        let probs = softmax_rows(cache.output().view());
        (cache, probs)
    });
    let l_delta = match &dec {
        Some((_, probs)) => {
            hash_flags(actions.iter().enumerate().map(|(i, &a)| probs[[i, a]] > LOG_CLAMP), &mut sig);
            cross_entropy(probs.view(), &actions)
        }
        None => 0.0,
    };

    let mut losses = LossBreakdown { transition: l_t, reward: l_r, contrastive: l_c, decoder: l_delta, total: 0.0 };
    losses.total = w.combine(&losses);
    let eval = LossEval { losses, signature: sig.finish() };
    let Some(grad) = grad else {
        return Ok(eval);
    };

    let mut d_pred = Array2::<f64>::zeros((b, d));
    let mut d_s = Array2::<f64>::zeros((b, d));
    let mut d_s_next = Array2::<f64>::zeros((b, d));
    let mut d_neg = Array2::<f64>::zeros((b, d));
    if w.w_t > 0.0 {
        for i in 0..b {
            if t_norms[i] > 0.0 {
                let g = diff.row(i).mapv(|v| w.w_t * v / (t_norms[i] * bf));
                d_pred.row_mut(i).scaled_add(-1.0, &g);
                if !options.stop_target_gradient {
                    d_s_next.row_mut(i).scaled_add(1.0, &g);
                }
            }
        }
    }
    if w.w_c > 0.0 {
        if let Some(m) = &neg_diff {
            for i in 0..b {
                if w.hinge_eps - neg_dist[i] > 0.0 && neg_dist[i] > 0.0 {
                    let g = m.row(i).mapv(|v| w.w_c * v / (neg_dist[i] * bf));
                    d_neg.row_mut(i).scaled_add(-1.0, &g);
                    d_pred.row_mut(i).scaled_add(1.0, &g);
                }
            }
        }
    }
    let mut d_a = Array2::<f64>::zeros(a_bar.raw_dim());
    // prediction = s + delta(s, a)
    d_s += &d_pred;
    if w.w_t > 0.0 || w.w_c > 0.0 {
        let dx = bundle.transition.backward(&t_cache, d_pred.view(), &mut grad.transition);
        d_s += &dx.slice(s![.., ..d]);
        d_a += &dx.slice(s![.., d..]);
    }
    if w.w_r > 0.0 {
        let sign = |e: f64| if e > 0.0 { 1.0 } else if e < 0.0 { -1.0 } else { 0.0 };
        let dr = Array2::from_shape_fn((b, 1), |(i, _)| -w.w_r * sign(r_err[i]) / bf);
        let dx = bundle.reward.backward(&r_cache, dr.view(), &mut grad.reward);
        d_s += &dx.slice(s![.., ..d]);
        d_a += &dx.slice(s![.., d..]);
    }
    if let (Some(psi), Some(psi_cache)) = (&bundle.action_encoder, &psi_cache) {
        let psi_grad = grad.action_encoder.as_mut().expect("gradient layout matches bundle");
        let dx = psi.backward(psi_cache, d_a.view(), psi_grad);
        if !bundle.spec.state_free_action_encoder {
            d_s += &dx.slice(s![.., ..d]);
        }
        if w.w_delta > 0.0 {
            let (cache, probs) = dec.as_ref().expect("decoder present with action encoder");
            let mut d_logits = probs.clone();
            for (i, &a) in actions.iter().enumerate() {
                if probs[[i, a]] > LOG_CLAMP {
                    d_logits[[i, a]] -= 1.0;
                    d_logits.row_mut(i).mapv_inplace(|v| w.w_delta * v / bf);
                } else {
                    d_logits.row_mut(i).fill(0.0);
                }
            }
            let delta = bundle.action_decoder.as_ref().expect("decoder present");
            let dec_grad = grad.action_decoder.as_mut().expect("gradient layout matches bundle");
            let d_a_dec = delta.backward(cache, d_logits.view(), dec_grad);
            psi.backward_params(detached_psi.as_ref().unwrap_or(psi_cache), d_a_dec.view(), psi_grad);
        }
    }

    let mut d_z = Array2::<f64>::zeros(z.raw_dim());
    for i in 0..b {
        d_z.row_mut(unique.o[i]).scaled_add(1.0, &d_s.row(i));
        d_z.row_mut(unique.o_next[i]).scaled_add(1.0, &d_s_next.row(i));
        if !unique.negatives.is_empty() {
            d_z.row_mut(unique.negatives[i]).scaled_add(1.0, &d_neg.row(i));
        }
    }
    bundle.encoder.backward(&enc_cache, d_z.view(), &mut grad.encoder);
    Ok(eval)
}

fn only(weights: LossWeights, pick: fn(&mut LossWeights)) -> LossOptions {
    let mut w = LossWeights { hinge_eps: weights.hinge_eps, ..LossWeights::zero() };
    pick(&mut w);
    LossOptions::new(w)
}

/// Mean `||phi(o') - (phi(o) + delta_T(phi(o), a_bar))||`.
pub fn transition_loss(bundle: &ModelBundle, batch: &[Transition]) -> Result<f64> {
    Ok(evaluate(bundle, batch, &[], &only(LossWeights::default(), |w| w.w_t = 1.0), None)?.losses.transition)
}

/// Mean `|r - R(phi(o), a_bar)|`.
pub fn reward_loss(bundle: &ModelBundle, batch: &[Transition]) -> Result<f64> {
    Ok(evaluate(bundle, batch, &[], &only(LossWeights::default(), |w| w.w_r = 1.0), None)?.losses.reward)
}

/// Mean hinge on the distance between negatives and predicted next states.
pub fn contrastive_loss(bundle: &ModelBundle, batch: &[Transition], negatives: &[Observation], hinge_eps: f64) -> Result<f64> {
    let mut w = LossWeights { hinge_eps, ..LossWeights::zero() };
    w.w_c = 1.0;
    Ok(evaluate(bundle, batch, negatives, &LossOptions::new(w), None)?.losses.contrastive)
}

/// Mean cross-entropy of the decoded latent action; zero without an action encoder.
pub fn decoder_loss(bundle: &ModelBundle, batch: &[Transition]) -> Result<f64> {
    Ok(evaluate(bundle, batch, &[], &only(LossWeights::default(), |w| w.w_delta = 1.0), None)?.losses.decoder)
}

pub fn total_loss(bundle: &ModelBundle, batch: &[Transition], negatives: &[Observation], weights: &LossWeights) -> Result<f64> {
    Ok(evaluate(bundle, batch, negatives, &LossOptions::new(*weights), None)?.losses.total)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(transition_error(array![[1.0, 0.0]].view(), array![[0.0, 0.0]].view()), 1.0);
        assert_eq!(reward_error(&[1.0], &[0.0]), 1.0);
        assert!((hinge_error(array![[0.4, 0.0]].view(), array![[0.0, 0.0]].view(), 1.0) - 0.6).abs() < 1e-15);
        assert_eq!(hinge_error(array![[3.0, 0.0]].view(), array![[0.0, 0.0]].view(), 1.0), 0.0);
        assert_eq!(hinge_error(array![[0.0, 0.0]].view(), array![[0.0, 0.0]].view(), 1.0), 1.0);
        let ce = cross_entropy(array![[0.7, 0.1, 0.1, 0.1]].view(), &[0]);
        assert!((ce - 0.35667).abs() < 1e-5);
        assert!((ce + 0.7f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy(array![[0.0, 1.0]].view(), &[1]), 0.0);
        assert!((cross_entropy(array![[0.25; 4]].view(), &[2]) - 4f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(array![[0.0, 1.0]].view(), &[0]) + LOG_CLAMP.ln()).abs() < 1e-12);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { w_t: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { hinge_eps: 0.0, ..Default::default() }.validate().is_err());
    }
}
