use futures::stream::{self, StreamExt};
use mpolab_core::InstructionSample;
use serde::{Deserialize, Serialize};

use super::prompt::{render_prompt, CotKind};
use super::EngineConfig;
use crate::error::{EngineError, Result};
use crate::genclient::{GenerationRequest, Generator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Call index that produced this response.
    pub index: usize,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallFailure {
    pub index: usize,
    pub message: String,
}

/// Responses sampled for one instruction, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sample_id: String,
    pub prompt: String,
    pub responses: Vec<Candidate>,
    pub failures: Vec<CallFailure>,
    pub temperature: f64,
}

/// Prompt used to sample candidates for `sample`.
///
/// Correctness samples get a CoT prompt ending in the final-answer directive;
/// other samples are sent their instruction unchanged.
pub fn sampling_prompt(sample: &InstructionSample, cfg: &EngineConfig) -> Result<String> {
    if !cfg.is_correctness_sample(sample) {
        return Ok(sample.instruction.clone());
    }
    match cfg.cot_kind {
        Some(kind) => render_prompt(sample, kind, true),
        None => render_prompt(sample, CotKind::for_domain(sample.domain_tag), false),
    }
}

/// Issues `cfg.max_samples` calls with `seed_hint` 0, 1, ... and keeps every
/// reply that succeeds.
pub async fn sample_candidates(
    sample: &InstructionSample,
    gen: &dyn Generator,
    cfg: &EngineConfig,
) -> Result<CandidateSet> {
    cfg.validate()?;
    let prompt = sampling_prompt(sample, cfg)?;
    let requests: Vec<GenerationRequest> = (0..cfg.max_samples)
        .map(|i| GenerationRequest {
            prompt: prompt.clone(),
            attachment_ref: sample.attachment_ref.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            seed_hint: Some(i as u64),
        })
        .collect();
    let replies: Vec<_> = stream::iter(requests.iter())
        .map(|r| gen.complete(r))
        .buffered(cfg.call_concurrency)
        .collect()
        .await;

    let mut responses = Vec::new();
    let mut failures = Vec::new();
    for (index, reply) in replies.into_iter().enumerate() {
        match reply {
            Ok(r) => responses.push(Candidate {
                index,
                text: r.text,
                prompt_tokens: r.prompt_tokens,
                completion_tokens: r.completion_tokens,
            }),
            Err(e) => {
                log::warn!("sample {}: call {index} failed: {e}", sample.id);
                failures.push(CallFailure {
                    index,
                    message: e.to_string(),
                });
            }
        }
    }
    if responses.is_empty() {
        return Err(EngineError::AllCallsFailed {
            sample_id: sample.id.clone(),
            failures: failures.into_iter().map(|f| f.message).collect(),
        });
    }
    Ok(CandidateSet {
        sample_id: sample.id.clone(),
        prompt,
        responses,
        failures,
        temperature: cfg.temperature,
    })
}
