use std::collections::BTreeSet;

use futures::stream::{self, StreamExt};
use mpolab_core::text::tokenize;
use mpolab_core::{InstructionSample, PairSource, PreferencePair};
use serde::{Deserialize, Serialize};

use super::candidates::sample_candidates;
use super::pairs::{build_pairs_correctness, dropout_ntp, SkipReason};
use super::stats::{cost_report, CallUsage, CostReport};
use super::{Branch, EngineConfig};
use crate::error::{EngineError, Result};
use crate::genclient::Generator;

/// What happened to one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub source: PairSource,
    pub candidates: usize,
    pub failed_calls: usize,
    pub pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// Sorted by sample id, then construction order.
    pub pairs: Vec<PreferencePair>,
    pub outcomes: Vec<SampleOutcome>,
    pub cost: CostReport,
}

struct Processed {
    outcome: SampleOutcome,
    pairs: Vec<PreferencePair>,
    usage: Vec<CallUsage>,
}

async fn correctness(sample: &InstructionSample, gen: &dyn Generator, cfg: &EngineConfig) -> Result<Processed> {
    let cands = sample_candidates(sample, gen, cfg).await?;
    let built = build_pairs_correctness(&cands, sample, cfg)?;
    Ok(Processed {
        outcome: SampleOutcome {
            sample_id: sample.id.clone(),
            source: PairSource::Correctness,
            candidates: cands.responses.len(),
            failed_calls: cands.failures.len(),
            pairs: built.pairs.len(),
            skipped: built.skipped,
        },
        pairs: built.pairs,
        usage: cands
            .responses
            .iter()
            .map(|c| CallUsage {
                prompt_tokens: c.prompt_tokens,
                completion_tokens: c.completion_tokens,
            })
            .collect(),
    })
}

async fn dropout(sample: &InstructionSample, gen: &dyn Generator, cfg: &EngineConfig) -> Result<Processed> {
    let sampling = EngineConfig {
        max_samples: cfg.dropout_pairs_per_query.min(cfg.max_samples).max(1),
        ..cfg.clone()
    };
    let cands = sample_candidates(sample, gen, &sampling).await?;
    let mut usage: Vec<CallUsage> = cands
        .responses
        .iter()
        .map(|c| CallUsage {
            prompt_tokens: c.prompt_tokens,
            completion_tokens: c.completion_tokens,
        })
        .collect();
    let mut pairs = Vec::new();
    for c in &cands.responses {
        let chosen = tokenize(&c.text, cfg.vocab_size);
        if chosen.len() < 2 {
            continue;
        }
        let (pair, u) = dropout_ntp(&chosen, sample, gen, cfg, c.index as u64).await?;
        usage.push(u);
        pairs.push(pair);
    }
    Ok(Processed {
        outcome: SampleOutcome {
            sample_id: sample.id.clone(),
            source: PairSource::DropoutNtp,
            candidates: cands.responses.len(),
            failed_calls: cands.failures.len(),
            pairs: pairs.len(),
            skipped: pairs.is_empty().then_some(SkipReason::TooShort),
        },
        pairs,
        usage,
    })
}

/// Runs the eligible branch for every sample in `branch`.
///
/// Samples are processed concurrently; output is merged in sample-id order,
/// so it depends only on the corpus, the generator and the seed.
pub async fn run_pipeline(
    samples: &[InstructionSample],
    gen: &dyn Generator,
    cfg: &EngineConfig,
    branch: Branch,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(EngineError::Core(mpolab_core::Error::Empty(
            "instruction corpus is empty",
        )));
    }
    let mut ids = BTreeSet::new();
    for s in samples {
        if !ids.insert(s.id.as_str()) {
            return Err(EngineError::DuplicateSample(s.id.clone()));
        }
    }

    let selected: Vec<(&InstructionSample, bool)> = samples
        .iter()
        .map(|s| (s, cfg.is_correctness_sample(s)))
        .filter(|&(_, is_c)| match branch {
            Branch::All => true,
            Branch::Correctness => is_c,
            Branch::Dropout => !is_c,
        })
        .collect();

    let mut results: Vec<(String, Result<Processed>)> = stream::iter(selected)
        .map(|(s, is_c)| async move {
            let r = if is_c {
                correctness(s, gen, cfg).await
            } else {
                dropout(s, gen, cfg).await
            };
            (s.id.clone(), r)
        })
        .buffer_unordered(cfg.query_concurrency)
        .collect()
        .await;
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut pairs = Vec::new();
    let mut outcomes = Vec::new();
    let mut usage = Vec::new();
    let mut failed = 0u64;
    for (_, r) in results {
        let p = r?;
        failed += p.outcome.failed_calls as u64;
        pairs.extend(p.pairs);
        usage.extend(p.usage);
        outcomes.push(p.outcome);
    }
    let cost = cost_report(&usage, failed, pairs.len());
    Ok(PipelineOutput { pairs, outcomes, cost })
}
