//! Actor and critic networks for latent-space control.

use ndarray::{Array2, ArrayView2};

use super::dense::{Activation, Mlp, MlpSpec};
use super::concat_cols;
use crate::types::{LatentAction, LatentState};

pub const POLICY_HIDDEN: [usize; 2] = [256, 256];

/// `s -> 256 -> 256 -> tanh(action_dim)`.
pub fn actor_spec(state_dim: usize, action_dim: usize) -> MlpSpec {
    MlpSpec::new(state_dim, &POLICY_HIDDEN, action_dim, Activation::Tanh)
}

/// `[s | a] -> 256 -> 256 -> 1`.
pub fn critic_spec(state_dim: usize, action_dim: usize) -> MlpSpec {
    MlpSpec::new(state_dim + action_dim, &POLICY_HIDDEN, 1, Activation::Identity)
}

/// `s -> 256 -> 256 -> n_actions`, one Q-value per discrete action.
pub fn q_network_spec(state_dim: usize, n_actions: usize) -> MlpSpec {
    MlpSpec::new(state_dim, &POLICY_HIDDEN, n_actions, Activation::Identity)
}

pub fn actor_forward(actor: &Mlp, s: &LatentState) -> LatentAction {
    LatentAction::clipped(actor.forward_one(s.as_slice()))
}

pub fn critic_forward(critic: &Mlp, s: &LatentState, a: &LatentAction) -> f64 {
    let mut x = s.0.clone();
    x.extend_from_slice(a.as_slice());
    critic.forward_one(&x)[0]
}

/// Batched critic evaluation; returns one value per row.
pub fn critic_batch(critic: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Vec<f64> {
    let q: Array2<f64> = critic.forward(concat_cols(states, actions).view());
    q.column(0).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actor_output_is_bounded() {
        let actor = Mlp::new(actor_spec(10, 5), 3);
        let s = LatentState((0..10).map(|i| (i as f64 - 4.5) * 40.0).collect());
        let a = actor_forward(&actor, &s);
        assert_eq!(a.dim(), 5);
        assert!(a.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn independent_critics_disagree() {
        let q1 = Mlp::new(critic_spec(10, 5), 1);
        let q2 = Mlp::new(critic_spec(10, 5), 2);
        let s = LatentState(vec![0.3; 10]);
        let a = LatentAction::new(vec![0.1, -0.2, 0.3, 0.0, 0.5]).unwrap();
        let (v1, v2) = (critic_forward(&q1, &s, &a), critic_forward(&q2, &s, &a));
        assert!(v1.is_finite() && v2.is_finite());
        assert_ne!(v1, v2);
    }
}
