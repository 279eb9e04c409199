use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::corpus::Vocabulary;

pub const UNIGRAM_POWER: f64 = 0.75;

/// Negative-sample table over the smoothed unigram distribution `count^0.75`.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    alias: WeightedAliasIndex<f64>,
    probs: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary) -> Self {
        Self::from_counts(vocab.counts())
    }

    pub fn from_counts(counts: &[u64]) -> Self {
        assert!(!counts.is_empty(), "negative sampler needs a non-empty vocabulary");
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(UNIGRAM_POWER)).collect();
        let z: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / z).collect();
        let alias = WeightedAliasIndex::new(weights).expect("positive finite weights");
        NegativeSampler { alias, probs }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.alias.sample(rng) as u32
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token() {
        let s = NegativeSampler::from_counts(&[7]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| s.sample(&mut rng) == 0));
        assert_eq!(s.probabilities(), &[1.0]);
    }

    #[test]
    fn closed_form_powers() {
        // 16^0.75 = 8, 81^0.75 = 27
        let s = NegativeSampler::from_counts(&[16, 81]);
        assert!((s.probabilities()[0] - 8.0 / 35.0).abs() < 1e-12);
        assert!((s.probabilities()[1] - 27.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_frequencies_match() {
        let counts = [16u64, 81, 3, 40, 1];
        let s = NegativeSampler::from_counts(&counts);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hist = [0usize; 5];
        let draws = 1_000_000;
        for _ in 0..draws {
            hist[s.sample(&mut rng) as usize] += 1;
        }
        for (h, p) in hist.iter().zip(s.probabilities()) {
            assert!((*h as f64 / draws as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let s = NegativeSampler::from_counts(&[5, 9, 2]);
        let a: Vec<u32> = {
            let mut r = ChaCha8Rng::seed_from_u64(4);
            (0..50).map(|_| s.sample(&mut r)).collect()
        };
        let b: Vec<u32> = {
            let mut r = ChaCha8Rng::seed_from_u64(4);
            (0..50).map(|_| s.sample(&mut r)).collect()
        };
        assert_eq!(a, b);
    }
}
