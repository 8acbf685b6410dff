use std::collections::BTreeMap;

use mpolab_core::text::word_count;
use mpolab_core::PreferencePair;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl FieldStats {
    fn of(values: &[usize]) -> Self {
        let sum: usize = values.iter().sum();
        Self {
            mean: sum as f64 / values.len() as f64,
            min: values.iter().copied().min().unwrap_or(0),
            max: values.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Token-length aggregates over one group of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub count: usize,
    pub instruction: FieldStats,
    pub chosen: FieldStats,
    pub rejected: FieldStats,
}

impl SourceStats {
    fn of(pairs: &[&PreferencePair]) -> Self {
        let lens = |f: &dyn Fn(&PreferencePair) -> usize| pairs.iter().map(|p| f(p)).collect::<Vec<_>>();
        Self {
            count: pairs.len(),
            instruction: FieldStats::of(&lens(&|p| word_count(&p.instruction))),
            chosen: FieldStats::of(&lens(&|p| p.chosen.len())),
            rejected: FieldStats::of(&lens(&|p| p.rejected.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub overall: SourceStats,
    /// Keyed by pair source name.
    pub by_source: BTreeMap<String, SourceStats>,
}

/// Instruction lengths count whitespace words; response lengths count tokens.
pub fn dataset_stats(pairs: &[PreferencePair]) -> Result<StatsReport> {
    if pairs.is_empty() {
        return Err(EngineError::Core(mpolab_core::Error::Empty(
            "statistics need at least one pair",
        )));
    }
    let all: Vec<&PreferencePair> = pairs.iter().collect();
    let mut groups: BTreeMap<String, Vec<&PreferencePair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.source.to_string()).or_default().push(p);
    }
    Ok(StatsReport {
        overall: SourceStats::of(&all),
        by_source: groups.into_iter().map(|(k, v)| (k, SourceStats::of(&v))).collect(),
    })
}

/// Token counts of one successful generator call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub generator_calls: u64,
    pub failed_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub pairs: u64,
    /// `None` when no pairs were produced.
    pub completion_tokens_per_pair: Option<f64>,
    pub total_tokens_per_pair: Option<f64>,
}

/// Totals over every successful call; failed calls carry no token counts.
pub fn cost_report(calls: &[CallUsage], failed_calls: u64, pairs: usize) -> CostReport {
    let prompt_tokens: u64 = calls.iter().map(|c| c.prompt_tokens).sum();
    let completion_tokens: u64 = calls.iter().map(|c| c.completion_tokens).sum();
    let per_pair = |t: u64| (pairs > 0).then(|| t as f64 / pairs as f64);
    CostReport {
        generator_calls: calls.len() as u64 + failed_calls,
        failed_calls,
        prompt_tokens,
        completion_tokens,
        pairs: pairs as u64,
        completion_tokens_per_pair: per_pair(completion_tokens),
        total_tokens_per_pair: per_pair(prompt_tokens + completion_tokens),
    }
}
