use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::TrainConfig;
use crate::losses::ShiftMode;

/// Where a hyperparameter value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    /// Published value, used unchanged.
    Paper,
    /// Chosen for the toy setting; no published value applies.
    Artifact,
    /// Set explicitly by the caller.
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub value: Value,
    pub source: ParamSource,
}

/// Every training hyperparameter with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub params: BTreeMap<String, ManifestEntry>,
}

impl RunManifest {
    /// Records `cfg`; keys listed in `overridden` are tagged as overrides.
    pub fn from_config(cfg: &TrainConfig, overridden: &BTreeSet<String>) -> Self {
        use ParamSource::{Artifact, Paper};
        let l = &cfg.loss_cfg;
        let shift = match l.shift_mode {
            ShiftMode::CumulativeMean => json!("cumulative_mean"),
            ShiftMode::Ema { decay } => json!({ "ema_decay": decay }),
        };
        let rows: Vec<(&str, Value, ParamSource)> = vec![
            ("loss_id", json!(cfg.objective.as_str()), Artifact),
            ("beta", json!(l.beta), Paper),
            ("epsilon", json!(l.epsilon), Artifact),
            ("orpo_lambda", json!(l.orpo_lambda), Artifact),
            ("w_p", json!(l.weights.w_p), Paper),
            ("w_q", json!(l.weights.w_q), Paper),
            ("w_g", json!(l.weights.w_g), Paper),
            ("reward_shift", shift, Artifact),
            ("vocab_size", json!(cfg.vocab_size), Artifact),
            ("batch_size", json!(cfg.batch_size), Artifact),
            ("epochs", json!(cfg.epochs), Paper),
            ("max_steps", json!(cfg.max_steps), Artifact),
            ("seed", json!(cfg.seed), Artifact),
            ("tr_dpo_every_k", json!(cfg.tr_dpo_every_k), Artifact),
            ("peak_lr", json!(cfg.peak_lr), Artifact),
            ("warmup_fraction", json!(cfg.warmup_fraction), Paper),
            ("min_lr", json!(cfg.min_lr), Paper),
            ("adam_beta1", json!(cfg.adam_beta1), Paper),
            ("adam_beta2", json!(cfg.adam_beta2), Paper),
            ("adam_eps", json!(cfg.adam_eps), Artifact),
            ("weight_decay", json!(cfg.weight_decay), Paper),
            ("apply_weight_decay", json!(cfg.apply_weight_decay), Artifact),
        ];
        let params = rows
            .into_iter()
            .map(|(k, value, default_source)| {
                let source = if overridden.contains(k) {
                    ParamSource::Override
                } else {
                    default_source
                };
                (k.to_string(), ManifestEntry { value, source })
            })
            .collect();
        Self { params }
    }
}
