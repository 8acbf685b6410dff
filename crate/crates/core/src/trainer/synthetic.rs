use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{PairSource, PreferencePair, TokenSequence, META_CHOSEN_VERDICT, META_REJECTED_VERDICT};

/// Builds a separable toy preference corpus.
///
/// Chosen tokens come from a categorical that puts weight `exp(skew)` on each
/// id in the lower half of the vocabulary and weight 1 elsewhere; rejected
/// tokens come from the mirror image (`v -> V - 1 - v`). With `skew = 0` the two
/// distributions coincide. Rejected sequences are redrawn until they differ
/// from their chosen partner.
pub fn make_synthetic_corpus(
    vocab: usize,
    n_pairs: usize,
    len: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if vocab < 2 {
        return Err(Error::Config(format!("synthetic vocabulary must be >= 2, got {vocab}")));
    }
    if len == 0 {
        return Err(Error::Config("synthetic sequence length must be >= 1".into()));
    }
    if !(skew.is_finite() && skew >= 0.0) {
        return Err(Error::Config(format!("skew must be >= 0, got {skew}")));
    }
    let half = vocab / 2;
    let heavy = skew.exp();
    let chosen_w: Vec<f64> = (0..vocab).map(|v| if v < half { heavy } else { 1.0 }).collect();
    let rejected_w: Vec<f64> = (0..vocab).map(|v| chosen_w[vocab - 1 - v]).collect();
    let chosen_dist = WeightedIndex::new(&chosen_w).map_err(|e| Error::Config(e.to_string()))?;
    let rejected_dist = WeightedIndex::new(&rejected_w).map_err(|e| Error::Config(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |dist: &WeightedIndex<f64>| -> Vec<u32> { (0..len).map(|_| dist.sample(&mut rng) as u32).collect() };

    let mut meta = BTreeMap::new();
    meta.insert(META_CHOSEN_VERDICT.to_string(), "positive".to_string());
    meta.insert(META_REJECTED_VERDICT.to_string(), "negative".to_string());
    meta.insert("origin".to_string(), "synthetic".to_string());
    meta.insert("skew".to_string(), skew.to_string());

    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let chosen = draw(&chosen_dist);
        let rejected = loop {
            let r = draw(&rejected_dist);
            if r != chosen {
                break r;
            }
        };
        pairs.push(PreferencePair {
            sample_id: format!("syn-{i:06}"),
            instruction: format!("synthetic prompt {i}"),
            chosen: TokenSequence::from_ids(chosen),
            rejected: TokenSequence::from_ids(rejected),
            source: PairSource::Correctness,
            meta: meta.clone(),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = make_synthetic_corpus(16, 50, 8, 2.0, 7).unwrap();
        let b = make_synthetic_corpus(16, 50, 8, 2.0, 7).unwrap();
        assert_eq!(a, b);
        for p in &a {
            p.validate().unwrap();
            p.chosen.check_vocab(16).unwrap();
            p.rejected.check_vocab(16).unwrap();
        }
    }

    #[test]
    fn skew_concentrates_chosen_on_lower_half() {
        let pairs = make_synthetic_corpus(64, 200, 20, 2.0, 1).unwrap();
        let lower = |s: &TokenSequence| s.tokens.iter().filter(|&&t| t < 32).count();
        let chosen: usize = pairs.iter().map(|p| lower(&p.chosen)).sum();
        let rejected: usize = pairs.iter().map(|p| lower(&p.rejected)).sum();
        let total = (200 * 20) as f64;
        // Expected lower-half share is e^2 / (e^2 + 1) ~ 0.881.
        assert!((chosen as f64 / total - 0.881).abs() < 0.02);
        assert!((rejected as f64 / total - 0.119).abs() < 0.02);
    }

    #[test]
    fn tiny_vocab_still_yields_distinct_pairs() {
        let pairs = make_synthetic_corpus(2, 100, 1, 0.0, 3).unwrap();
        assert!(pairs.iter().all(|p| p.chosen != p.rejected));
    }

    #[test]
    fn bad_arguments() {
        assert!(make_synthetic_corpus(1, 1, 1, 1.0, 0).is_err());
        assert!(make_synthetic_corpus(4, 1, 0, 1.0, 0).is_err());
        assert!(make_synthetic_corpus(4, 1, 1, -1.0, 0).is_err());
    }
}
