//! FIFO replay storage with reproducible sampling.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{Observation, Transition};

/// Redraw budget before a negative sample is accepted even if it matches.
const NEGATIVE_REDRAWS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    WithoutReplacement,
    WithReplacement,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: VecDeque<T>,
    seed: u64,
    sampling: Sampling,
    rng: Rng,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            seed,
            sampling: Sampling::WithoutReplacement,
            rng: rng::seeded(seed, "replay"),
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    /// Buffer pre-filled with `items`, keeping only the newest `capacity`.
    pub fn from_items(items: impl IntoIterator<Item = T>, capacity: usize, seed: u64) -> Self {
        let mut buffer = Self::new(capacity, seed);
        for item in items {
            buffer.push(item);
        }
        buffer
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// Rewinds the sampling RNG to its seeded state.
    pub fn reset_rng(&mut self) {
        self.rng = rng::seeded(self.seed, "replay");
    }

    /// Indices of a uniformly sampled minibatch.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        let available = self.entries.len();
        if n == 0 || available < n {
            return Err(Error::Underfilled { available, requested: n });
        }
        Ok(match self.sampling {
            Sampling::WithoutReplacement => index::sample(&mut self.rng, available, n).into_vec(),
            Sampling::WithReplacement => (0..n).map(|_| self.rng.random_range(0..available)).collect(),
        })
    }

    pub fn sample_batch(&mut self, n: usize) -> Result<Vec<T>> {
        let idx = self.sample_indices(n)?;
        Ok(idx.into_iter().map(|i| self.entries[i].clone()).collect())
    }
}

impl ReplayBuffer<Transition> {
    /// One negative observation per batch element, drawn uniformly from the
    /// successor observations stored in the buffer and redrawn while it is
    /// pixel-identical to that element's own `o_next`.
    pub fn sample_negatives(&mut self, batch: &[Transition]) -> Result<Vec<Observation>> {
        if self.entries.len() <= batch.len() {
            return Err(Error::Underfilled { available: self.entries.len(), requested: batch.len() + 1 });
        }
        let entries = &self.entries;
        Ok(draw_negatives(entries.len(), |i| &entries[i].o_next, batch, &mut self.rng))
    }
}

/// Shared negative sampler over any indexable pool of observations.
pub fn draw_negatives<'a>(
    pool_len: usize,
    pool: impl Fn(usize) -> &'a Observation,
    batch: &[Transition],
    rng: &mut Rng,
) -> Vec<Observation> {
    let mut warned = false;
    batch
        .iter()
        .map(|t| {
            let mut candidate = pool(rng.random_range(0..pool_len));
            let mut tries = 1;
            while candidate.same_pixels(&t.o_next) && tries < NEGATIVE_REDRAWS {
                candidate = pool(rng.random_range(0..pool_len));
                tries += 1;
            }
            if candidate.same_pixels(&t.o_next) && !warned {
                log::warn!("negative sampling: pool offers no observation distinct from a positive; returning a duplicate");
                warned = true;
            }
            candidate.clone()
        })
        .collect()
}
