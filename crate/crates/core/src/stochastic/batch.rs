use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The residual sample: a prefix of one fixed random permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    permutation: Vec<usize>,
    size: usize,
    /// Iteration at which the current batch epoch began.
    pub epoch_start: usize,
    /// Observed reduction accumulated over the epoch (relaxed test).
    pub observed_reduction: f64,
}

impl BatchState {
    /// Batch of `size` over a given permutation.
    pub fn from_permutation(permutation: Vec<usize>, size: usize) -> Self {
        let size = size.clamp(1.min(permutation.len()), permutation.len());
        Self {
            permutation,
            size,
            epoch_start: 0,
            observed_reduction: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn total(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_full(&self) -> bool {
        self.size >= self.permutation.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Indices in the current batch, in permutation order.
    pub fn indices(&self) -> &[usize] {
        &self.permutation[..self.size]
    }

    /// Extends the batch to `new_size` and returns the newly added indices.
    /// The epoch restarts at `iteration`.
    pub fn grow(&mut self, new_size: usize, iteration: usize) -> &[usize] {
        let new_size = new_size.min(self.permutation.len());
        assert!(new_size >= self.size, "batch size never decreases");
        let old = self.size;
        self.size = new_size;
        self.epoch_start = iteration;
        self.observed_reduction = 0.0;
        &self.permutation[old..new_size]
    }
}

/// Initial batch size `max(min_size, ⌈fraction · n⌉)`, at most `n`.
pub fn initial_batch_size(n: usize, fraction: f64, min_size: usize) -> usize {
    // tolerate representation error in products such as 0.1 · 2000
    let from_fraction = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    from_fraction.max(min_size).min(n)
}

/// Shuffles `0..n` with `rng` and takes the initial prefix.
pub fn init_batch_with_rng(
    n: usize,
    fraction: f64,
    min_size: usize,
    rng: &mut ChaCha8Rng,
) -> BatchState {
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);
    BatchState::from_permutation(permutation, initial_batch_size(n, fraction, min_size))
}

/// Seeded initial batch. `min_size` is normally `d + 1`.
pub fn init_batch(n: usize, fraction: f64, seed: u64, min_size: usize) -> BatchState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_batch_with_rng(n, fraction, min_size, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
    }

    #[test]
    fn full_fraction() {
        let b = init_batch(10, 1.0, 7, 1);
        assert_eq!(b.size(), 10);
        assert!(b.is_full());
        assert!(is_permutation(b.permutation()));
    }

    #[test]
    fn tenth_of_two_thousand() {
        assert_eq!(init_batch(2000, 0.1, 1, 6).size(), 200);
    }

    #[test]
    fn minimum_size_guard() {
        assert_eq!(initial_batch_size(30, 0.1, 6), 6);
        assert_eq!(initial_batch_size(4, 0.1, 6), 4);
    }

    #[test]
    fn seeded_shuffle_is_reproducible() {
        assert_eq!(init_batch(500, 0.1, 42, 1), init_batch(500, 0.1, 42, 1));
        assert_ne!(
            init_batch(500, 0.1, 42, 1).permutation(),
            init_batch(500, 0.1, 43, 1).permutation()
        );
    }

    #[test]
    fn growth_keeps_prefix_and_resets_epoch() {
        let mut b = init_batch(100, 0.1, 3, 1);
        let before = b.indices().to_vec();
        b.observed_reduction = -4.0;
        let added = b.grow(25, 9).to_vec();
        assert_eq!(added.len(), 15);
        assert_eq!(&b.indices()[..10], &before[..]);
        assert_eq!(b.epoch_start, 9);
        assert_eq!(b.observed_reduction, 0.0);
        b.grow(1000, 10);
        assert!(b.is_full());
    }
}
