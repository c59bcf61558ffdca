use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EpisodeStep;
use crate::error::{Error, Result};

/// Fixed-capacity FIFO store of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<EpisodeStep>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
        })
    }

    pub fn push(&mut self, step: EpisodeStep) {
        if self.items.len() < self.capacity {
            self.items.push(step);
        } else {
            self.items[self.next] = step;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<&EpisodeStep>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Config(format!(
                "cannot sample {batch} transitions from {}",
                self.items.len()
            )));
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
