//! Preference-pair construction from an instruction corpus.
//!
//! Samples with a checkable ground truth go through the correctness branch:
//! candidates are sampled, verified, and every (positive, non-positive) pair
//! is a preference pair. The rest go through DropoutNTP: a sampled response is
//! chosen, and the rejected response is a text-only continuation of its
//! retained prefix.
//!
//! The dropout ratio names the fraction of the chosen response that is
//! retained, not the fraction dropped: 0.25 keeps the first quarter.

mod candidates;
mod pairs;
mod pipeline;
mod prompt;
mod stats;
pub mod verify;

use std::fmt;
use std::str::FromStr;

use mpolab_core::text::DEFAULT_HASH_VOCAB;
use mpolab_core::{DomainTag, InstructionSample};
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

pub use candidates::{sample_candidates, sampling_prompt, CallFailure, Candidate, CandidateSet};
pub use pairs::{build_pairs_correctness, dropout_ntp, retained_count, CorrectnessPairs, SkipReason};
pub use pipeline::{run_pipeline, PipelineOutput, SampleOutcome};
pub use prompt::{continuation_prompt, render_prompt, CotKind, FINAL_ANSWER_DIRECTIVE};
pub use stats::{cost_report, dataset_stats, CallUsage, CostReport, FieldStats, SourceStats, StatsReport};
pub use verify::{verify_answer, Verdict, VerdictLabel};

/// Which pipeline(s) a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    All,
    Correctness,
    Dropout,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::All => "all",
            Branch::Correctness => "correctness",
            Branch::Dropout => "dropout",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Branch::All),
            "correctness" => Ok(Branch::Correctness),
            "dropout" | "dropout_ntp" => Ok(Branch::Dropout),
            other => Err(EngineError::Config(format!("unknown branch {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub max_samples: usize,
    pub max_pairs_per_query: usize,
    pub temperature: f64,
    /// Retained prefix fraction for DropoutNTP.
    pub dropout_ratio: f64,
    pub numeric_tolerance: f64,
    pub seed: u64,
    pub max_tokens: u32,
    /// Chosen responses turned into DropoutNTP pairs per sample.
    pub dropout_pairs_per_query: usize,
    /// Let general-VQA and document samples into the correctness branch.
    pub include_all_domains: bool,
    /// Force one CoT style on every correctness sample instead of routing by domain.
    pub cot_kind: Option<CotKind>,
    pub query_concurrency: usize,
    pub call_concurrency: usize,
    pub vocab_size: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_samples: 32,
            max_pairs_per_query: 15,
            temperature: 1.0,
            dropout_ratio: 0.5,
            numeric_tolerance: 1e-6,
            seed: 0,
            max_tokens: 1024,
            dropout_pairs_per_query: 1,
            include_all_domains: false,
            cot_kind: None,
            query_concurrency: 8,
            call_concurrency: 8,
            vocab_size: DEFAULT_HASH_VOCAB,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.max_samples == 0 {
            return bad("max_samples must be at least 1".into());
        }
        if self.max_pairs_per_query == 0 {
            return bad("max_pairs_per_query must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.dropout_ratio > 0.0 && self.dropout_ratio < 1.0) {
            return bad(format!("dropout_ratio must lie in (0, 1), got {}", self.dropout_ratio));
        }
        if !(self.numeric_tolerance >= 0.0 && self.numeric_tolerance.is_finite()) {
            return bad(format!(
                "numeric_tolerance must be >= 0, got {}",
                self.numeric_tolerance
            ));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        if self.query_concurrency == 0 || self.call_concurrency == 0 {
            return bad("concurrency limits must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be at least 1".into());
        }
        Ok(())
    }

    /// Whether `sample` belongs to the correctness branch.
    pub fn is_correctness_sample(&self, sample: &InstructionSample) -> bool {
        sample.has_ground_truth()
            && (self.include_all_domains || !matches!(sample.domain_tag, DomainTag::GeneralVqa | DomainTag::Document))
    }
}
