use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Name, shape and location of one tensor inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable parameters of one network, stored contiguously.
///
/// Gradients, optimizer moments and target copies are plain `Vec<f64>` of the
/// same length, which keeps soft updates and checkpointing elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
    init_seed: u64,
}

impl ParamVector {
    pub fn from_parts(specs: Vec<TensorSpec>, data: Vec<f64>, init_seed: u64) -> Result<Self> {
        let mut expected = 0;
        for spec in &specs {
            if spec.offset != expected {
                return Err(Error::Shape(format!("tensor `{}` is not contiguous", spec.name)));
            }
            expected += spec.len();
        }
        if expected != data.len() {
            return Err(Error::Shape(format!("{} values for {expected} declared parameters", data.len())));
        }
        Ok(Self { specs, data, init_seed })
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.specs.iter().find(|s| s.name == name).map(|s| &self.data[s.range()])
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.specs == other.specs
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &ParamVector, tau: f64) {
        debug_assert!(self.same_layout(online));
        if tau == 1.0 {
            self.data.copy_from_slice(&online.data);
            return;
        }
        for (t, o) in self.data.iter_mut().zip(&online.data) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

/// Declares tensors in order and draws their initial values.
pub struct ParamBuilder {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
    rng: Rng,
    seed: u64,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self { specs: Vec::new(), data: Vec::new(), rng: rng::seeded(seed, "init"), seed }
    }

    /// Adds a tensor drawn from `U(-bound, bound)` and returns its offset.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> usize {
        let offset = self.data.len();
        let len: usize = shape.iter().product();
        self.data.extend((0..len).map(|_| self.rng.random_range(-bound..=bound)));
        self.specs.push(TensorSpec { name: name.into(), shape: shape.to_vec(), offset });
        offset
    }

    pub fn finish(self) -> ParamVector {
        ParamVector { specs: self.specs, data: self.data, init_seed: self.seed }
    }
}
