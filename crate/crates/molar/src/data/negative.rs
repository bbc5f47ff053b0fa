//! Uniform 1:1 negative sampling.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{MolarError, Result};

/// Draws one negative item per positive, uniformly over the catalog,
/// excluding the positive itself and the in-window positives of the user.
/// The rejection loop is bounded; after 100 tries it falls back to the next
/// item id that differs from the positive.
pub struct NegativeSampler {
    num_items: usize,
}

impl NegativeSampler {
    pub fn new(num_items: usize) -> Result<Self> {
        if num_items < 2 {
            return Err(MolarError::Data(format!(
                "negative sampling needs at least 2 catalog items, got {num_items}"
            )));
        }
        Ok(Self { num_items })
    }

    pub fn sample(&self, rng: &mut ChaCha20Rng, positive: u64, exclude: &[u64]) -> u64 {
        for _ in 0..100 {
            let candidate = rng.random_range(0..self.num_items as u64);
            if candidate != positive && !exclude.contains(&candidate) {
                return candidate;
            }
        }
        // bounded fallback: any item that is not the positive
        let mut candidate = (positive + 1) % self.num_items as u64;
        while candidate == positive {
            candidate = (candidate + 1) % self.num_items as u64;
        }
        candidate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn two_item_catalog_always_returns_the_other() {
        let sampler = NegativeSampler::new(2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sampler.sample(&mut rng, 0, &[]), 1);
        }
    }

    #[test]
    fn never_returns_the_positive_or_excluded() {
        let sampler = NegativeSampler::new(10).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let exclude = vec![1, 2, 3];
        for _ in 0..10_000 {
            let s = sampler.sample(&mut rng, 0, &exclude);
            assert_ne!(s, 0);
            assert!(!exclude.contains(&s));
        }
    }

    #[test]
    fn eligible_negatives_are_uniform_within_three_sigma() {
        let n_items = 20usize;
        let sampler = NegativeSampler::new(n_items).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let exclude = vec![5, 6];
        let positive = 0u64;
        let eligible = n_items - 3; // minus positive and two excluded
        let draws = 100_000usize;
        let mut counts = vec![0usize; n_items];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng, positive, &exclude) as usize] += 1;
        }
        let p = 1.0 / eligible as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let expected = draws as f64 * p;
        for (item, &c) in counts.iter().enumerate() {
            if item as u64 == positive || exclude.contains(&(item as u64)) {
                assert_eq!(c, 0);
            } else {
                assert!(
                    (c as f64 - expected).abs() < 3.0 * sigma,
                    "item {item}: count {c} vs expected {expected:.1} (sigma {sigma:.1})"
                );
            }
        }
    }

    #[test]
    fn fixed_seed_gives_identical_stream() {
        let sampler = NegativeSampler::new(50).unwrap();
        let stream = |seed: u64| -> Vec<u64> {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            (0..100).map(|i| sampler.sample(&mut rng, i % 50, &[])).collect()
        };
        assert_eq!(stream(42), stream(42));
        assert_ne!(stream(42), stream(43));
    }

    #[test]
    fn single_item_catalog_is_rejected() {
        assert!(NegativeSampler::new(1).is_err());
    }
}
