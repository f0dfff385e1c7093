//! Replay buffer storing full (O, A, O', R, C) tuples, oldest-first eviction.

use rand::Rng;

use crate::env::{AdjacencyMatrix, Observation};
use crate::error::{Error, Result};

/// One stored environment step. The adjacency is the one observed at time t;
/// training reuses it for the next-state Q evaluation (the frozen-C rule).
#[derive(Debug, Clone)]
pub struct Transition {
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub next_observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub adjacency: AdjacencyMatrix,
    /// True when this step ended the episode; targets then skip bootstrapping.
    pub terminal: bool,
}

impl Transition {
    pub fn num_agents(&self) -> usize {
        self.observations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.observations.len();
        if self.actions.len() != n
            || self.next_observations.len() != n
            || self.rewards.len() != n
            || self.adjacency.n() != n
        {
            return Err(Error::ShapeMismatch(format!(
                "transition fields disagree on agent count ({n} observations)"
            )));
        }
        Ok(())
    }
}

/// Fixed-capacity ring buffer.
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
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

    /// Store one transition, evicting the oldest at capacity.
    pub fn store(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Uniform sample of `size` transitions, with replacement.
    pub fn sample<R: Rng>(&self, size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < size {
            return Err(Error::BufferUnderfull {
                have: self.items.len(),
                need: size,
            });
        }
        Ok((0..size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: f64) -> Transition {
        Transition {
            observations: vec![Observation([tag, 0.0, 0.0, 0.0])],
            actions: vec![0],
            next_observations: vec![Observation([tag, 0.0, 0.0, 0.0])],
            rewards: vec![-tag],
            adjacency: AdjacencyMatrix::identity(1),
            terminal: false,
        }
    }

    #[test]
    fn eviction_is_oldest_first() {
        let mut buf = ReplayBuffer::new(2);
        buf.store(transition(1.0));
        buf.store(transition(2.0));
        buf.store(transition(3.0));
        assert_eq!(buf.len(), 2);
        let tags: Vec<f64> = buf.items.iter().map(|t| t.observations[0].0[0]).collect();
        assert!(tags.contains(&2.0) && tags.contains(&3.0));
        assert!(!tags.contains(&1.0));
    }

    #[test]
    fn sample_full_buffer() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..5 {
            buf.store(transition(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(5, &mut rng).unwrap();
        assert_eq!(batch.len(), 5);
        assert!(buf.sample(6, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut buf = ReplayBuffer::new(4);
        for i in 0..4 {
            buf.store(transition(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            for t in buf.sample(1, &mut rng).unwrap() {
                counts[t.observations[0].0[0] as usize] += 1;
            }
        }
        // chi-square with 3 dof, expected 1000 each; 16.27 is the 0.1% cut
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0)
            .sum();
        assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn mismatched_transition_rejected() {
        let mut t = transition(0.0);
        t.actions = vec![0, 1];
        assert!(t.validate().is_err());
    }
}
