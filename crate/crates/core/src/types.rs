//! Domain types shared by every module.

use std::sync::Arc;

use crate::error::{Error, Result};

/// An RGB image stored as 8-bit samples in row-major `(y, x, channel)` order.
///
/// Networks consume the normalized view (`sample / 255`), so every value seen
/// by a model lies in `[0, 1]`. Pixels are shared through an `Arc`; successive
/// transitions reuse the same observation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    height: usize,
    width: usize,
    pixels: Arc<[u8]>,
}

impl Observation {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width * Self::CHANNELS {
            return Err(Error::Shape(format!(
                "{} samples for a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels: pixels.into() })
    }

    pub fn blank(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0u8; height * width * Self::CHANNELS].into() }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, Self::CHANNELS)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Normalized sample at `(y, x, c)`.
    pub fn value(&self, y: usize, x: usize, c: usize) -> f64 {
        f64::from(self.pixels[(y * self.width + x) * Self::CHANNELS + c]) / 255.0
    }

    /// All samples scaled into `[0, 1]`, in storage order.
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn same_pixels(&self, other: &Observation) -> bool {
        Arc::ptr_eq(&self.pixels, &other.pixels) || self.pixels == other.pixels
    }
}

/// A discrete environment action `index` out of `n_actions`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DiscreteAction {
    index: usize,
    n_actions: usize,
}

impl DiscreteAction {
    pub fn new(index: usize, n_actions: usize) -> Result<Self> {
        if index >= n_actions {
            return Err(Error::ActionOutOfRange { index, n_actions });
        }
        Ok(Self { index, n_actions })
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn n_actions(self) -> usize {
        self.n_actions
    }
}

/// One-hot encoding of `a`: a vector of length `K` with a single 1.
pub fn one_hot(a: DiscreteAction) -> Vec<f64> {
    let mut v = vec![0.0; a.n_actions];
    v[a.index] = 1.0;
    v
}

/// Checked one-hot from a raw index.
pub fn one_hot_index(index: usize, n_actions: usize) -> Result<Vec<f64>> {
    DiscreteAction::new(index, n_actions).map(one_hot)
}

/// A point in the latent state space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState(pub Vec<f64>);

impl LatentState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A point in the latent action space, always inside `[-1, 1]^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentAction(Vec<f64>);

impl LatentAction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("latent action entry {v} outside [-1, 1]")));
        }
        Ok(Self(values))
    }

    /// Clips every entry into `[-1, 1]`.
    pub fn clipped(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = v.clamp(-1.0, 1.0);
        }
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One experience tuple `(o, a, r, o', done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub o: Observation,
    pub a: DiscreteAction,
    pub r: f64,
    pub o_next: Observation,
    pub done: bool,
}

impl Transition {
    pub fn new(o: Observation, a: DiscreteAction, r: f64, o_next: Observation, done: bool) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::Shape(format!("non-finite reward {r}")));
        }
        if o.shape() != o_next.shape() {
            return Err(Error::Shape("o and o_next differ in shape".into()));
        }
        Ok(Self { o, a, r, o_next, done })
    }
}
