use alloc::vec::Vec;

use rand::Rng;

use crate::policy::WeightedExample;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    example: WeightedExample,
    /// Reciprocal length of the source trajectory.
    sample_weight: f64,
}

/// Fixed-capacity store of training examples. Once full, a new entry replaces a
/// uniformly chosen old one.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Entry>,
    pushed: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            entries: Vec::new(),
            pushed: 0,
        }
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

    /// Examples pushed so far, including overwritten ones.
    pub fn collected(&self) -> usize {
        self.pushed
    }

    /// Stores an example drawn from a trajectory of `traj_len` steps.
    pub fn push(&mut self, example: WeightedExample, traj_len: usize, rng: &mut SimRng) {
        let entry = Entry {
            example,
            sample_weight: 1.0 / traj_len.max(1) as f64,
        };
        self.pushed += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            let victim = rng.gen_range(0..self.entries.len());
            self.entries[victim] = entry;
        }
    }

    /// Draws one example with probability proportional to its sampling weight.
    /// Weights never exceed 1, so rejection sampling against 1 is exact.
    pub fn sample(&self, rng: &mut SimRng) -> Option<&WeightedExample> {
        if self.entries.is_empty() {
            return None;
        }
        loop {
            let e = &self.entries[rng.gen_range(0..self.entries.len())];
            if rng.gen::<f64>() < e.sample_weight {
                return Some(&e.example);
            }
        }
    }

    pub fn sampling_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.sample_weight)
    }
}

/// A training batch and how many of its examples came from the buffer.
#[derive(Debug, Clone)]
pub struct MixedBatch<'a> {
    pub examples: Vec<&'a WeightedExample>,
    pub from_replay: usize,
}

/// Builds a batch: all fresh examples while replay is disabled, otherwise each
/// slot is drawn from the buffer with probability `mix` and from `fresh` otherwise.
pub fn replay_mix<'a>(
    buffer: &'a ReplayBuffer,
    fresh: &'a [WeightedExample],
    batch_size: usize,
    enabled: bool,
    mix: f64,
    rng: &mut SimRng,
) -> MixedBatch<'a> {
    if !enabled || buffer.is_empty() {
        let examples: Vec<&WeightedExample> = if fresh.len() <= batch_size {
            fresh.iter().collect()
        } else {
            rand::seq::index::sample(rng, fresh.len(), batch_size)
                .into_iter()
                .map(|i| &fresh[i])
                .collect()
        };
        return MixedBatch {
            examples,
            from_replay: 0,
        };
    }
    let mut examples = Vec::with_capacity(batch_size);
    let mut from_replay = 0;
    for _ in 0..batch_size {
        if fresh.is_empty() || rng.gen_bool(mix) {
            examples.push(buffer.sample(rng).expect("non-empty buffer"));
            from_replay += 1;
        } else {
            examples.push(&fresh[rng.gen_range(0..fresh.len())]);
        }
    }
    MixedBatch {
        examples,
        from_replay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::FeatureBatch;

    fn ex(w: f64) -> WeightedExample {
        WeightedExample {
            features: FeatureBatch::new(),
            chosen: 0,
            weight: w,
        }
    }

    #[test]
    fn overflow_keeps_capacity() {
        let mut rng = crate::rng::seeded(0);
        let mut b = ReplayBuffer::new(5);
        for i in 0..50 {
            b.push(ex(i as f64), 1, &mut rng);
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.collected(), 50);
    }

    #[test]
    fn below_threshold_is_all_fresh() {
        let mut rng = crate::rng::seeded(1);
        let mut b = ReplayBuffer::new(10);
        b.push(ex(1.0), 2, &mut rng);
        let fresh = [ex(0.5), ex(0.5)];
        let m = replay_mix(&b, &fresh, 8, false, 0.9, &mut rng);
        assert_eq!((m.examples.len(), m.from_replay), (2, 0));
    }

    #[test]
    fn sampling_follows_reciprocal_length() {
        let mut rng = crate::rng::seeded(2);
        let mut b = ReplayBuffer::new(10);
        b.push(ex(1.0), 1, &mut rng);
        b.push(ex(2.0), 4, &mut rng);
        let n = 20_000;
        let short = (0..n)
            .filter(|_| b.sample(&mut rng).unwrap().weight == 1.0)
            .count();
        let frac = short as f64 / n as f64;
        assert!((frac - 0.8).abs() < 0.02, "{frac}");
    }
}
