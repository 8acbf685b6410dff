use std::collections::BTreeMap;
use std::fmt;

use mpolab_core::text::{tokenize, word_prefix};
use mpolab_core::types::{META_CHOSEN_VERDICT, META_DROPOUT_RATIO, META_REJECTED_VERDICT, META_RETAINED_TOKENS};
use mpolab_core::{InstructionSample, PairSource, PreferencePair, TokenSequence};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::candidates::CandidateSet;
use super::prompt::continuation_prompt;
use super::stats::CallUsage;
use super::verify::{verify_answer, Verdict, VerdictLabel};
use super::EngineConfig;
use crate::error::{EngineError, Result};
use crate::genclient::{GenerationRequest, Generator};

/// Why a sample produced no pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoPositive,
    NoNegative,
    /// Every sampled response was shorter than two tokens.
    TooShort,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoPositive => "no_positive",
            SkipReason::NoNegative => "no_negative",
            SkipReason::TooShort => "too_short",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessPairs {
    pub pairs: Vec<PreferencePair>,
    /// One verdict per candidate, in candidate order.
    pub verdicts: Vec<Verdict>,
    pub skipped: Option<SkipReason>,
}

/// Per-sample shuffle seed: the run seed mixed with a hash of the sample id.
fn sample_seed(seed: u64, sample_id: &str) -> u64 {
    let digest = Sha256::digest(sample_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    seed ^ u64::from_be_bytes(head)
}

/// Pairs every positive candidate with every negative or unverifiable one,
/// shuffles the product deterministically and keeps at most
/// `cfg.max_pairs_per_query`.
pub fn build_pairs_correctness(
    cands: &CandidateSet,
    sample: &InstructionSample,
    cfg: &EngineConfig,
) -> Result<CorrectnessPairs> {
    let truth = sample
        .ground_truth
        .as_deref()
        .filter(|g| !g.trim().is_empty())
        .ok_or_else(|| EngineError::Sample {
            sample_id: sample.id.clone(),
            message: "correctness pairing needs a ground truth".into(),
        })?;
    let verdicts: Vec<Verdict> = cands
        .responses
        .iter()
        .map(|c| verify_answer(&c.text, truth, cfg.numeric_tolerance))
        .collect();
    let positives: Vec<usize> = (0..verdicts.len())
        .filter(|&i| verdicts[i].label == VerdictLabel::Positive)
        .collect();
    // Whitespace-only responses have no tokens and cannot be a pair side.
    let negatives: Vec<usize> = (0..verdicts.len())
        .filter(|&i| verdicts[i].label != VerdictLabel::Positive && !cands.responses[i].text.trim().is_empty())
        .collect();
    let skipped = if positives.is_empty() {
        Some(SkipReason::NoPositive)
    } else if negatives.is_empty() {
        Some(SkipReason::NoNegative)
    } else {
        None
    };
    if let Some(reason) = skipped {
        return Ok(CorrectnessPairs {
            pairs: Vec::new(),
            verdicts,
            skipped: Some(reason),
        });
    }

    let mut product: Vec<(usize, usize)> = positives
        .iter()
        .flat_map(|&p| negatives.iter().map(move |&n| (p, n)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, &sample.id));
    product.shuffle(&mut rng);
    product.truncate(cfg.max_pairs_per_query);

    let mut pairs = Vec::with_capacity(product.len());
    for (p, n) in product {
        let (chosen, rejected) = (&cands.responses[p], &cands.responses[n]);
        let mut meta = BTreeMap::new();
        meta.insert(META_CHOSEN_VERDICT.to_string(), VerdictLabel::Positive.to_string());
        meta.insert(META_REJECTED_VERDICT.to_string(), verdicts[n].label.to_string());
        meta.insert("chosen_index".to_string(), chosen.index.to_string());
        meta.insert("rejected_index".to_string(), rejected.index.to_string());
        meta.insert("ground_truth".to_string(), truth.to_string());
        if let Some(a) = &verdicts[p].extracted_answer {
            meta.insert("chosen_answer".to_string(), a.clone());
        }
        if let Some(a) = &verdicts[n].extracted_answer {
            meta.insert("rejected_answer".to_string(), a.clone());
        }
        let pair = PreferencePair {
            sample_id: sample.id.clone(),
            instruction: sample.instruction.clone(),
            chosen: tokenize(&chosen.text, cfg.vocab_size),
            rejected: tokenize(&rejected.text, cfg.vocab_size),
            source: PairSource::Correctness,
            meta,
        };
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(CorrectnessPairs {
        pairs,
        verdicts,
        skipped: None,
    })
}

/// Tokens kept from a chosen response of `len` tokens: `max(1, floor(dr * len))`.
pub fn retained_count(len: usize, dropout_ratio: f64) -> Result<usize> {
    if len < 2 {
        return Err(EngineError::Config(format!(
            "a response needs at least 2 tokens to truncate, got {len}"
        )));
    }
    if !(dropout_ratio > 0.0 && dropout_ratio < 1.0) {
        return Err(EngineError::Config(format!(
            "dropout_ratio must lie in (0, 1), got {dropout_ratio}"
        )));
    }
    let k = ((dropout_ratio * len as f64).floor() as usize).max(1);
    Ok(k.min(len - 1))
}

/// Builds a DropoutNTP pair from `chosen`.
///
/// The continuation request carries no attachment. `call_index` is passed as
/// the request's seed hint.
pub async fn dropout_ntp(
    chosen: &TokenSequence,
    sample: &InstructionSample,
    gen: &dyn Generator,
    cfg: &EngineConfig,
    call_index: u64,
) -> Result<(PreferencePair, CallUsage)> {
    let sample_err = |message: String| EngineError::Sample {
        sample_id: sample.id.clone(),
        message,
    };
    let text = chosen
        .text
        .as_deref()
        .ok_or_else(|| sample_err("dropout needs the chosen response text".into()))?;
    let len = chosen.len();
    let k = retained_count(len, cfg.dropout_ratio)?;
    let prefix = word_prefix(text, k).ok_or_else(|| sample_err(format!("chosen text has fewer than {k} words")))?;

    let req = GenerationRequest {
        prompt: continuation_prompt(&sample.instruction, prefix),
        attachment_ref: None,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        seed_hint: Some(call_index),
    };
    let reply = gen.complete(&req).await?;
    let usage = CallUsage {
        prompt_tokens: reply.prompt_tokens,
        completion_tokens: reply.completion_tokens,
    };

    let cont = reply.text.as_str();
    let rejected_text = if cont.trim().is_empty() {
        prefix.to_string()
    } else if cont.starts_with(char::is_whitespace) {
        format!("{prefix}{cont}")
    } else {
        format!("{prefix} {cont}")
    };
    if rejected_text == text {
        return Err(sample_err("continuation reproduced the chosen response".into()));
    }
    let rejected = tokenize(&rejected_text, cfg.vocab_size);

    let mut meta = BTreeMap::new();
    meta.insert(META_DROPOUT_RATIO.to_string(), cfg.dropout_ratio.to_string());
    meta.insert(META_RETAINED_TOKENS.to_string(), k.to_string());
    meta.insert("chosen_tokens".to_string(), len.to_string());
    meta.insert("rejected_tokens".to_string(), rejected.len().to_string());
    meta.insert("continuation_index".to_string(), call_index.to_string());
    let pair = PreferencePair {
        sample_id: sample.id.clone(),
        instruction: sample.instruction.clone(),
        chosen: chosen.clone(),
        rejected,
        source: PairSource::DropoutNtp,
        meta,
    };
    pair.validate()?;
    Ok((pair, usage))
}
