//! Toy categorical sequence policies with exact parameter gradients.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenSequence;

/// Numerically stable `ln Σ exp(x_i)`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// A trainable sequence model over a fixed integer vocabulary.
pub trait SequencePolicy: Clone + Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Flat parameter vector seen by the optimizer.
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Summed natural-log probability of `y`; always `<= 0`.
    fn sequence_logprob(&self, y: &TokenSequence) -> Result<f64>;

    /// Adds `scale * d logp(y) / d params` into `out`.
    fn accumulate_logprob_grad(&self, y: &TokenSequence, scale: f64, out: &mut [f64]) -> Result<()>;

    /// Gradient of [`sequence_logprob`](Self::sequence_logprob) with respect to the parameters.
    fn logprob_param_grad(&self, y: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params().len()];
        self.accumulate_logprob_grad(y, 1.0, &mut g)?;
        Ok(g)
    }
}

fn check_sequence(y: &TokenSequence, vocab: usize) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Empty("sequence has no tokens"));
    }
    y.check_vocab(vocab)
}

/// Position-independent categorical policy: every token drawn from `softmax(logits)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnigramPolicy {
    pub logits: Vec<f64>,
}

impl UnigramPolicy {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Config("vocabulary size must be >= 1".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("logits must be finite".into()));
        }
        Ok(Self { logits })
    }

    /// All-zero logits, i.e. the uniform distribution.
    pub fn uniform(vocab: usize) -> Result<Self> {
        Self::new(vec![0.0; vocab])
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

impl SequencePolicy for UnigramPolicy {
    fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn sequence_logprob(&self, y: &TokenSequence) -> Result<f64> {
        check_sequence(y, self.logits.len())?;
        let lse = logsumexp(&self.logits);
        Ok(y.tokens.iter().map(|&t| self.logits[t as usize] - lse).sum())
    }

    fn accumulate_logprob_grad(&self, y: &TokenSequence, scale: f64, out: &mut [f64]) -> Result<()> {
        check_sequence(y, self.logits.len())?;
        if out.len() != self.logits.len() {
            return Err(Error::DimensionMismatch {
                expected: self.logits.len(),
                actual: out.len(),
            });
        }
        let n = y.len() as f64;
        for (o, p) in out.iter_mut().zip(self.probabilities()) {
            *o -= scale * n * p;
        }
        for &t in &y.tokens {
            out[t as usize] += scale;
        }
        Ok(())
    }
}

/// First-order policy: each token conditioned on the previous one.
///
/// Logits form a `(V + 1) x V` row-major table; row `V` is the start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramPolicy {
    vocab: usize,
    table: Vec<f64>,
}

impl BigramPolicy {
    pub fn uniform(vocab: usize) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::Config("vocabulary size must be >= 1".into()));
        }
        Ok(Self {
            vocab,
            table: vec![0.0; (vocab + 1) * vocab],
        })
    }

    fn row(&self, prev: usize) -> &[f64] {
        &self.table[prev * self.vocab..(prev + 1) * self.vocab]
    }

    /// Row index of each position's conditioning state.
    fn states<'a>(&self, y: &'a TokenSequence) -> impl Iterator<Item = (usize, usize)> + 'a {
        let start = self.vocab;
        std::iter::once(start)
            .chain(y.tokens.iter().map(|&t| t as usize))
            .zip(y.tokens.iter().map(|&t| t as usize))
    }
}

impl SequencePolicy for BigramPolicy {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn params(&self) -> &[f64] {
        &self.table
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    fn sequence_logprob(&self, y: &TokenSequence) -> Result<f64> {
        check_sequence(y, self.vocab)?;
        Ok(self
            .states(y)
            .map(|(prev, t)| {
                let row = self.row(prev);
                row[t] - logsumexp(row)
            })
            .sum())
    }

    fn accumulate_logprob_grad(&self, y: &TokenSequence, scale: f64, out: &mut [f64]) -> Result<()> {
        check_sequence(y, self.vocab)?;
        if out.len() != self.table.len() {
            return Err(Error::DimensionMismatch {
                expected: self.table.len(),
                actual: out.len(),
            });
        }
        for (prev, t) in self.states(y) {
            let base = prev * self.vocab;
            for (j, p) in softmax(self.row(prev)).into_iter().enumerate() {
                out[base + j] -= scale * p;
            }
            out[base + t] += scale;
        }
        Ok(())
    }
}

/// Frozen copy of a policy used as the reference model.
///
/// Holds its own deep copy, so training the policy never moves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSnapshot<P = UnigramPolicy> {
    model: P,
    pub step_taken: usize,
}

impl<P: SequencePolicy> ReferenceSnapshot<P> {
    pub fn capture(policy: &P, step: usize) -> Self {
        Self {
            model: policy.clone(),
            step_taken: step,
        }
    }

    pub fn model(&self) -> &P {
        &self.model
    }

    pub fn sequence_logprob(&self, y: &TokenSequence) -> Result<f64> {
        self.model.sequence_logprob(y)
    }
}

impl ReferenceSnapshot<UnigramPolicy> {
    pub fn logits(&self) -> &[f64] {
        &self.model.logits
    }
}

/// Re-captures the reference from `policy` when `step` is a positive multiple
/// of `every_k`; otherwise hands back `reference` untouched.
pub fn sync_reference<P: SequencePolicy>(
    policy: &P,
    reference: ReferenceSnapshot<P>,
    step: usize,
    every_k: usize,
) -> Result<ReferenceSnapshot<P>> {
    if every_k == 0 {
        return Err(Error::Config("reference sync interval must be >= 1".into()));
    }
    if step > 0 && step.is_multiple_of(every_k) {
        Ok(ReferenceSnapshot::capture(policy, step))
    } else {
        Ok(reference)
    }
}

/// Draws `length` i.i.d. tokens from `softmax(logits / temperature)`.
pub fn sample_sequence(policy: &UnigramPolicy, length: usize, temperature: f64, seed: u64) -> Result<TokenSequence> {
    if length == 0 {
        return Err(Error::Config("sample length must be >= 1".into()));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let scaled: Vec<f64> = policy.logits.iter().map(|l| l / temperature).collect();
    let dist = WeightedIndex::new(softmax(&scaled))
        .map_err(|e| Error::Config(format!("degenerate sampling distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = (0..length).map(|_| dist.sample(&mut rng) as u32).collect();
    Ok(TokenSequence::from_ids(tokens))
}

/// On-disk form of a unigram policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    #[serde(rename = "V")]
    pub vocab: usize,
    pub logits: Vec<f64>,
    pub step: usize,
}

impl PolicyCheckpoint {
    pub fn from_policy(policy: &UnigramPolicy, step: usize) -> Self {
        Self {
            vocab: policy.logits.len(),
            logits: policy.logits.clone(),
            step,
        }
    }

    pub fn into_policy(self) -> Result<UnigramPolicy> {
        if self.logits.len() != self.vocab {
            return Err(Error::DimensionMismatch {
                expected: self.vocab,
                actual: self.logits.len(),
            });
        }
        UnigramPolicy::new(self.logits)
    }
}
