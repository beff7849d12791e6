//! Exact check that the policy gradient of a 1-D latent policy equals the
//! policy gradient of the discrete policy it induces through a deterministic
//! interval decoder.
//!
//! The latent density is piecewise constant on [`LATENT_BINS`] equal bins of
//! `[-1, 1]` with softmax weights per state, so every preimage integral is a
//! finite sum. Values and occupancies come from linear solves.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mdp::TabularMdp;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LATENT_BINS: usize = 64;
pub const FD_STEP: f64 = 1e-5;
/// Floor for relative errors between exact gradients.
const EXACT_FLOOR: f64 = 1e-12;
/// Floor for relative errors against finite differences.
const FD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Instance {
    pub mdp: TabularMdp,
    /// Initial-state distribution.
    pub d0: Vec<f64>,
    /// `n_actions - 1` increasing cut points in `(-1, 1)`; interval `k` of
    /// `[-1, 1]` decodes to action `k`.
    pub thresholds: Vec<f64>,
    /// Softmax logits, `theta[s * LATENT_BINS + b]`.
    pub theta: Vec<f64>,
}

impl Prop2Instance {
    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        let (n, k) = (self.mdp.n_states, self.mdp.n_actions);
        if self.d0.len() != n || (self.d0.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.d0.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("d0 must be a distribution over states".into()));
        }
        if self.thresholds.len() + 1 != k {
            return Err(Error::Config(format!("{k} actions need {} thresholds", k - 1)));
        }
        let mut prev = -1.0;
        for &t in &self.thresholds {
            if !(t > prev && t < 1.0) {
                return Err(Error::Config("thresholds must increase strictly inside (-1, 1)".into()));
            }
            prev = t;
        }
        if self.theta.len() != n * LATENT_BINS {
            return Err(Error::Shape(format!("theta needs {} entries", n * LATENT_BINS)));
        }
        Ok(())
    }

    /// Random instance with `2..=max_states` states and `2..=max_actions`
    /// actions.
    pub fn random(rng: &mut Rng, max_states: usize, max_actions: usize, gamma: f64) -> Self {
        let n = rng.random_range(2..=max_states.max(2));
        let k = rng.random_range(2..=max_actions.max(2));
        let next = (0..n * k).map(|_| rng.random_range(0..n)).collect();
        let reward = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mdp = TabularMdp { n_states: n, n_actions: k, next, reward, gamma };
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut thresholds: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-0.95..0.95)).collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        while thresholds.len() < k - 1 {
            thresholds.push(thresholds.last().copied().unwrap_or(0.0) / 2.0 + 0.5);
            thresholds.sort_by(f64::total_cmp);
        }
        let theta = (0..n * LATENT_BINS).map(|_| StandardNormal.sample(rng)).collect();
        Self { mdp, d0: raw.iter().map(|x| x / total).collect(), thresholds, theta }
    }

    fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.theta[s * LATENT_BINS..(s + 1) * LATENT_BINS];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|x| x / z).collect()
    }
}

pub fn bin_width() -> f64 {
    2.0 / LATENT_BINS as f64
}

/// Decoded action of a latent scalar.
pub fn decode_interval(thresholds: &[f64], x: f64) -> usize {
    thresholds.iter().take_while(|&&t| x >= t).count()
}

/// Segments of `[-1, 1]` cut at bin edges and thresholds: `(bin, action, length)`.
pub fn latent_pieces(thresholds: &[f64]) -> Vec<(usize, usize, f64)> {
    let w = bin_width();
    let mut cuts: Vec<f64> = (0..=LATENT_BINS).map(|b| -1.0 + b as f64 * w).collect();
    cuts.extend_from_slice(thresholds);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|c| c[1] > c[0])
        .map(|c| {
            let mid = 0.5 * (c[0] + c[1]);
            let bin = (((mid + 1.0) / w) as usize).min(LATENT_BINS - 1);
            (bin, decode_interval(thresholds, mid), c[1] - c[0])
        })
        .collect()
}

/// `C[b][a]`: fraction of bin `b` that decodes to action `a`.
pub fn bin_action_fractions(thresholds: &[f64]) -> Vec<Vec<f64>> {
    let k = thresholds.len() + 1;
    let mut c = vec![vec![0.0; k]; LATENT_BINS];
    for (b, a, len) in latent_pieces(thresholds) {
        c[b][a] += len / bin_width();
    }
    c
}

/// Decoder that keeps the interval's action with probability `1 - rho` and
/// otherwise emits the next action index.
pub fn noisy_fractions(thresholds: &[f64], rho: f64) -> Vec<Vec<f64>> {
    let det = bin_action_fractions(thresholds);
    let k = thresholds.len() + 1;
    det.iter().map(|row| (0..k).map(|a| (1.0 - rho) * row[a] + rho * row[(a + k - 1) % k]).collect()).collect()
}

struct Evaluation {
    j: f64,
    occupancy: Vec<f64>,
    q: Vec<Vec<f64>>,
}

/// Exact evaluation of a stochastic policy on a deterministic MDP.
fn evaluate_stochastic(mdp: &TabularMdp, d0: &[f64], policy: &[Vec<f64>]) -> Result<Evaluation> {
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (act, &p) in policy[s].iter().enumerate() {
            a[(s, mdp.t(s, act))] -= mdp.gamma * p;
            r[s] += p * mdp.r(s, act);
        }
    }
    let lu = a.clone().lu();
    let v = lu.solve(&r).ok_or_else(|| Error::Config("singular evaluation system".into()))?;
    let occupancy = a
        .transpose()
        .lu()
        .solve(&DVector::from_column_slice(d0))
        .ok_or_else(|| Error::Config("singular occupancy system".into()))?;
    let q = (0..n).map(|s| (0..mdp.n_actions).map(|act| mdp.r(s, act) + mdp.gamma * v[mdp.t(s, act)]).collect()).collect();
    let j = d0.iter().zip(v.iter()).map(|(p, x)| p * x).sum();
    Ok(Evaluation { j, occupancy: occupancy.iter().copied().collect(), q })
}

fn induced_policy(inst: &Prop2Instance, fractions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = inst.mdp.n_actions;
    (0..inst.mdp.n_states)
        .map(|s| {
            let p = inst.probs(s);
            (0..k).map(|a| (0..LATENT_BINS).map(|b| p[b] * fractions[b][a]).sum()).collect()
        })
        .collect()
}

/// Performance `J = sum_s d0(s) V(s)` of the induced discrete policy.
pub fn performance(inst: &Prop2Instance, fractions: &[Vec<f64>]) -> Result<f64> {
    Ok(evaluate_stochastic(&inst.mdp, &inst.d0, &induced_policy(inst, fractions))?.j)
}

/// Route (i): policy-gradient theorem on the discrete policy
/// `pi_i(a|s) = sum_b p_b(s) C[b][a]`.
fn intermediate_gradient(inst: &Prop2Instance, fractions: &[Vec<f64>]) -> Result<(Vec<f64>, Evaluation)> {
    let policy = induced_policy(inst, fractions);
    let eval = evaluate_stochastic(&inst.mdp, &inst.d0, &policy)?;
    let mut grad = vec![0.0; inst.theta.len()];
    for s in 0..inst.mdp.n_states {
        let p = inst.probs(s);
        for b in 0..LATENT_BINS {
            // d pi_i(a|s) / d theta_{s,b} = p_b (C[b][a] - pi_i(a|s))
            let dpi_q: f64 = (0..inst.mdp.n_actions).map(|a| (fractions[b][a] - policy[s][a]) * eval.q[s][a]).sum();
            grad[s * LATENT_BINS + b] = eval.occupancy[s] * p[b] * dpi_q;
        }
    }
    Ok((grad, eval))
}

/// Route (ii): likelihood-ratio gradient of the latent policy on the MDP
/// whose actions are latent scalars, built by integrating piece by piece.
fn latent_gradient(inst: &Prop2Instance) -> Result<Vec<f64>> {
    let pieces = latent_pieces(&inst.thresholds);
    let w = bin_width();
    let (n, mdp) = (inst.mdp.n_states, &inst.mdp);
    let masses: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let p = inst.probs(s);
            pieces.iter().map(|&(b, _, len)| p[b] * len / w).collect()
        })
        .collect();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (&(_, act, _), &m) in pieces.iter().zip(&masses[s]) {
            a[(s, mdp.t(s, act))] -= mdp.gamma * m;
            r[s] += m * mdp.r(s, act);
        }
    }
    let v = a.clone().lu().solve(&r).ok_or_else(|| Error::Config("singular latent evaluation".into()))?;
    let occ = a
        .transpose()
        .lu()
        .solve(&DVector::from_column_slice(&inst.d0))
        .ok_or_else(|| Error::Config("singular latent occupancy".into()))?;
    let mut grad = vec![0.0; inst.theta.len()];
    for s in 0..n {
        let p = inst.probs(s);
        for (&(b_piece, act, _), &m) in pieces.iter().zip(&masses[s]) {
            let q = mdp.r(s, act) + mdp.gamma * v[mdp.t(s, act)];
            // grad of ln pi_bar(x|s) w.r.t. theta_{s,b} is 1[b = bin(x)] - p_b
            for b in 0..LATENT_BINS {
                let score = f64::from(u8::from(b == b_piece)) - p[b];
                grad[s * LATENT_BINS + b] += occ[s] * m * score * q;
            }
        }
    }
    Ok(grad)
}

fn finite_difference(inst: &Prop2Instance, fractions: &[Vec<f64>], h: f64) -> Result<Vec<f64>> {
    let mut probe = inst.clone();
    (0..inst.theta.len())
        .map(|i| {
            let orig = probe.theta[i];
            probe.theta[i] = orig + h;
            let plus = performance(&probe, fractions)?;
            probe.theta[i] = orig - h;
            let minus = performance(&probe, fractions)?;
            probe.theta[i] = orig;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Report {
    pub performance: f64,
    pub grad_intermediate: Vec<f64>,
    pub grad_latent: Vec<f64>,
    pub grad_finite_difference: Vec<f64>,
    /// Route (i) against route (ii).
    pub max_rel_err: f64,
    /// Route (i) against finite differences.
    pub fd_max_rel_err: f64,
}

pub fn check_proposition2(inst: &Prop2Instance) -> Result<Prop2Report> {
    inst.validate()?;
    let fractions = bin_action_fractions(&inst.thresholds);
    let (grad_intermediate, eval) = intermediate_gradient(inst, &fractions)?;
    let grad_latent = latent_gradient(inst)?;
    let grad_finite_difference = finite_difference(inst, &fractions, FD_STEP)?;
    Ok(Prop2Report {
        performance: eval.j,
        max_rel_err: max_rel_err(&grad_intermediate, &grad_latent, EXACT_FLOOR),
        fd_max_rel_err: max_rel_err(&grad_intermediate, &grad_finite_difference, FD_FLOOR),
        grad_intermediate,
        grad_latent,
        grad_finite_difference,
    })
}

/// Same comparison with a decoder that leaks probability `rho` to a
/// neighbouring action. `grad_intermediate` is the true gradient of the
/// induced policy; `grad_latent` substitutes `Q(s, a) = Q(s, x)` for the
/// interval's nominal action, which is only valid for a deterministic
/// decoder.
pub fn stochastic_decoder_probe(inst: &Prop2Instance, rho: f64) -> Result<Prop2Report> {
    inst.validate()?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config("leak probability must lie in [0, 1]".into()));
    }
    let noisy = noisy_fractions(&inst.thresholds, rho);
    let nominal = bin_action_fractions(&inst.thresholds);
    let (grad_intermediate, eval) = intermediate_gradient(inst, &noisy)?;
    let mut grad_latent = vec![0.0; inst.theta.len()];
    for s in 0..inst.mdp.n_states {
        let p = inst.probs(s);
        let q_bin: Vec<f64> = (0..LATENT_BINS).map(|b| (0..inst.mdp.n_actions).map(|a| nominal[b][a] * eval.q[s][a]).sum()).collect();
        let mean: f64 = p.iter().zip(&q_bin).map(|(x, y)| x * y).sum();
        for b in 0..LATENT_BINS {
            grad_latent[s * LATENT_BINS + b] = eval.occupancy[s] * p[b] * (q_bin[b] - mean);
        }
    }
    let grad_finite_difference = finite_difference(inst, &noisy, FD_STEP)?;
    Ok(Prop2Report {
        performance: eval.j,
        max_rel_err: max_rel_err(&grad_intermediate, &grad_latent, EXACT_FLOOR),
        fd_max_rel_err: max_rel_err(&grad_intermediate, &grad_finite_difference, FD_FLOOR),
        grad_intermediate,
        grad_latent,
        grad_finite_difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn fractions_partition_each_bin() {
        let c = bin_action_fractions(&[-0.33, 0.01, 0.5]);
        for row in &c {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let total_len: f64 = latent_pieces(&[-0.33, 0.01, 0.5]).iter().map(|p| p.2).sum();
        assert!((total_len - 2.0).abs() < 1e-12);
        assert_eq!(decode_interval(&[-0.33, 0.01, 0.5], -1.0), 0);
        assert_eq!(decode_interval(&[-0.33, 0.01, 0.5], 0.01), 2);
        assert_eq!(decode_interval(&[-0.33, 0.01, 0.5], 1.0), 3);
    }

    #[test]
    fn uniform_policy_on_symmetric_mdp_has_zero_gradient() {
        let mdp = TabularMdp::new(2, 2, vec![1, 1, 0, 0], vec![0.5, 0.5, -1.0, -1.0], 0.9).unwrap();
        let inst = Prop2Instance { mdp, d0: vec![0.5, 0.5], thresholds: vec![0.0], theta: vec![0.0; 2 * LATENT_BINS] };
        let report = check_proposition2(&inst).unwrap();
        assert!(report.grad_intermediate.iter().all(|g| g.abs() < 1e-12));
        assert!(report.grad_latent.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn two_state_two_action_instance() {
        let mdp = TabularMdp::new(2, 2, vec![0, 1, 1, 0], vec![0.0, 1.0, 2.0, -1.0], 0.9).unwrap();
        let theta = (0..2 * LATENT_BINS).map(|i| (i as f64 * 0.7).sin()).collect();
        let inst = Prop2Instance { mdp, d0: vec![1.0, 0.0], thresholds: vec![0.123], theta };
        let report = check_proposition2(&inst).unwrap();
        assert!(report.max_rel_err < 1e-6, "{}", report.max_rel_err);
        assert!(report.fd_max_rel_err < 1e-4, "{}", report.fd_max_rel_err);
        assert!(report.grad_intermediate.iter().any(|g| g.abs() > 1e-3));
    }

    #[test]
    fn random_instances_agree() {
        let mut r = rng::seeded(3, "prop2-test");
        for _ in 0..5 {
            let inst = Prop2Instance::random(&mut r, 10, 4, 0.9);
            let report = check_proposition2(&inst).unwrap();
            assert!(report.max_rel_err < 1e-6 && report.fd_max_rel_err < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn leaky_decoder_breaks_the_identity() {
        let mut r = rng::seeded(4, "prop2-probe");
        let inst = Prop2Instance::random(&mut r, 6, 3, 0.9);
        let clean = stochastic_decoder_probe(&inst, 0.0).unwrap();
        assert!(clean.max_rel_err < 1e-6);
        let leaky = stochastic_decoder_probe(&inst, 0.3).unwrap();
        assert!(leaky.max_rel_err > 1e-2, "{}", leaky.max_rel_err);
        // the true gradient is still the derivative of the true performance
        assert!(leaky.fd_max_rel_err < 1e-4);
    }
}
