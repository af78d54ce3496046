//! Seeded sampling without replacement.
//!
//! The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`, and
//! draws use a partial Fisher-Yates shuffle where step `i` swaps position `i`
//! with `i + (next_u64() % (n - i))`. Both pieces are fixed so a recorded seed
//! reproduces the same sample in any implementation that follows them.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Returns `k` distinct indices in `0..n`, in draw order.
///
/// Panics if `k > n`; callers validate sizes first.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} items from {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let span = (n - i) as u64;
        let j = i + (rng.next_u64() % span) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(sample_indices(500, 100, 42), sample_indices(500, 100, 42));
        assert_ne!(sample_indices(500, 100, 42), sample_indices(500, 100, 43));
    }

    #[test]
    fn distinct_and_in_range() {
        let s = sample_indices(50, 50, 9);
        let set: HashSet<_> = s.iter().copied().collect();
        assert_eq!(set.len(), 50);
        assert!(s.iter().all(|&i| i < 50));
    }

    #[test]
    fn zero_draws() {
        assert!(sample_indices(3, 0, 1).is_empty());
    }
}
