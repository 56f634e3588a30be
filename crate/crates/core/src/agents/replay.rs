use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
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

    pub fn push(&mut self, t: T) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Distinct transitions drawn uniformly; fewer if the buffer is smaller.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<&T> {
        let n = batch.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    /// Transitions from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn keeps_last_capacity_items(cap in 1usize..20, n in 0usize..80) {
            let mut b = ReplayBuffer::new(cap);
            for i in 0..n {
                b.push(i);
            }
            prop_assert_eq!(b.len(), n.min(cap));
            let held: Vec<usize> = b.iter_ordered().copied().collect();
            let expect: Vec<usize> = (n.saturating_sub(cap)..n).collect();
            prop_assert_eq!(held, expect);
        }
    }

    #[test]
    fn samples_without_replacement() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let mut s: Vec<usize> = b.sample(&mut rng, 32).into_iter().copied().collect();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 32);
        }
        assert_eq!(b.sample(&mut rng, 80).len(), 50);
    }
}
