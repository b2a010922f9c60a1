use rand::Rng;

/// Fixed-capacity ring buffer; the oldest item is overwritten when full.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
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

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    /// Items in storage order (not insertion order once wrapped).
    pub fn as_slice(&self) -> &[T] {
        &self.items
    }

    /// `n` indices drawn uniformly with replacement from the filled region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn overwrites_oldest_when_full() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.as_slice(), &[3, 4, 2]);
    }

    #[test]
    fn samples_only_filled_region() {
        let mut b = ReplayBuffer::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample_indices(4, &mut rng).is_empty());
        for i in 0..7 {
            b.push(i);
        }
        let idx = b.sample_indices(1000, &mut rng);
        assert_eq!(idx.len(), 1000);
        assert!(idx.iter().all(|&i| i < 7));
        // with replacement over 7 slots, all of them show up
        for slot in 0..7 {
            assert!(idx.contains(&slot));
        }
    }
}
