//! Fixed-capacity FIFO replay with uniform sampling.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{AfaError, Result};

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(AfaError::config("replay capacity must be positive"));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest item when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// `n` items drawn uniformly with replacement; needs at least `n` stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<T>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(AfaError::ReplayUnderflow {
                have: self.items.len(),
                need: n.max(1),
            });
        }
        Ok((0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}
