use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// A transition expressed in latent coordinates. `action` holds either the
/// latent action (TD3) or a single entry with the discrete index (DQN).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTransition {
    pub s: Vec<f64>,
    pub action: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Column-stacked view of a minibatch.
pub struct Stacked {
    pub s: Array2<f64>,
    pub action: Array2<f64>,
    pub r: Vec<f64>,
    pub s_next: Array2<f64>,
    pub done: Vec<bool>,
}

pub fn stack(batch: &[LatentTransition]) -> Stacked {
    let n = batch.len();
    let rows = |f: fn(&LatentTransition) -> &Vec<f64>| {
        let width = batch.first().map_or(0, |t| f(t).len());
        Array2::from_shape_vec((n, width), batch.iter().flat_map(|t| f(t).iter().copied()).collect()).expect("uniform widths")
    };
    Stacked {
        s: rows(|t| &t.s),
        action: rows(|t| &t.action),
        r: batch.iter().map(|t| t.r).collect(),
        s_next: rows(|t| &t.s_next),
        done: batch.iter().map(|t| t.done).collect(),
    }
}
