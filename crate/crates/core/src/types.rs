//! Domain types shared by the loss laboratory and the data engine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ShiftMode;
use crate::text;

/// Meta key holding the verifier verdict of the chosen response.
pub const META_CHOSEN_VERDICT: &str = "chosen_verdict";
/// Meta key holding the verifier verdict of the rejected response.
pub const META_REJECTED_VERDICT: &str = "rejected_verdict";
/// Meta key holding the number of chosen tokens kept as the shared prefix.
pub const META_RETAINED_TOKENS: &str = "retained_tokens";
/// Meta key holding the retained-prefix fraction used by dropout continuation.
pub const META_DROPOUT_RATIO: &str = "dropout_ratio";

/// An ordered run of token ids, optionally with the surface text it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl TokenSequence {
    pub fn from_ids(tokens: Vec<u32>) -> Self {
        Self { tokens, text: None }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Fails if any token id is `>= vocab`.
    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(Error::OutOfVocabulary { token, vocab }),
            None => Ok(()),
        }
    }

    /// Two responses are the same if their texts match byte for byte; when
    /// either side carries no text, token ids decide.
    pub fn same_response(&self, other: &TokenSequence) -> bool {
        match (&self.text, &other.text) {
            (Some(a), Some(b)) => a == b,
            _ => self.tokens == other.tokens,
        }
    }
}

/// Source domain of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    GeneralVqa,
    Science,
    Chart,
    Mathematics,
    Ocr,
    Document,
    Synthetic,
}

impl DomainTag {
    pub const ALL: [DomainTag; 7] = [
        DomainTag::GeneralVqa,
        DomainTag::Science,
        DomainTag::Chart,
        DomainTag::Mathematics,
        DomainTag::Ocr,
        DomainTag::Document,
        DomainTag::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::GeneralVqa => "general_vqa",
            DomainTag::Science => "science",
            DomainTag::Chart => "chart",
            DomainTag::Mathematics => "mathematics",
            DomainTag::Ocr => "ocr",
            DomainTag::Document => "document",
            DomainTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One instruction to build preference data for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    pub instruction: String,
    /// Opaque image handle. Never dereferenced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    pub domain_tag: DomainTag,
}

impl InstructionSample {
    /// Whether the sample can go through answer verification.
    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.as_deref().is_some_and(|g| !g.trim().is_empty())
    }
}

/// Which pipeline produced a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Correctness,
    DropoutNtp,
}

impl PairSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PairSource::Correctness => "correctness",
            PairSource::DropoutNtp => "dropout_ntp",
        }
    }
}

impl fmt::Display for PairSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single (instruction, chosen, rejected) training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub sample_id: String,
    pub instruction: String,
    pub chosen: TokenSequence,
    pub rejected: TokenSequence,
    pub source: PairSource,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl PreferencePair {
    /// Checks every record-level invariant, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        if self.chosen.is_empty() {
            return Err(Error::invariant("chosen", "response must have at least one token"));
        }
        if self.rejected.is_empty() {
            return Err(Error::invariant("rejected", "response must have at least one token"));
        }
        if self.chosen.same_response(&self.rejected) {
            return Err(Error::invariant("rejected", "chosen and rejected are identical"));
        }
        match self.source {
            PairSource::Correctness => self.validate_verdicts(),
            PairSource::DropoutNtp => self.validate_prefix(),
        }
    }

    fn validate_verdicts(&self) -> Result<()> {
        match self.meta.get(META_CHOSEN_VERDICT).map(String::as_str) {
            Some("positive") => {}
            other => {
                return Err(Error::invariant(
                    "meta.chosen_verdict",
                    format!("expected \"positive\", found {other:?}"),
                ))
            }
        }
        match self.meta.get(META_REJECTED_VERDICT).map(String::as_str) {
            Some("negative" | "unverifiable") => Ok(()),
            other => Err(Error::invariant(
                "meta.rejected_verdict",
                format!("expected \"negative\" or \"unverifiable\", found {other:?}"),
            )),
        }
    }

    fn validate_prefix(&self) -> Result<()> {
        let k = self.retained_tokens()?;
        if k == 0 || k >= self.chosen.len() {
            return Err(Error::invariant(
                "meta.retained_tokens",
                format!("{k} is not in 1..{}", self.chosen.len()),
            ));
        }
        if self.rejected.len() < k || self.chosen.tokens[..k] != self.rejected.tokens[..k] {
            return Err(Error::invariant(
                "rejected",
                format!("does not start with the first {k} chosen tokens"),
            ));
        }
        if let (Some(c), Some(r)) = (&self.chosen.text, &self.rejected.text) {
            let prefix = text::word_prefix(c, k)
                .ok_or_else(|| Error::invariant("chosen.text", format!("has fewer than {k} words")))?;
            if !r.starts_with(prefix) {
                return Err(Error::invariant(
                    "rejected.text",
                    "does not begin with the retained prefix of chosen.text",
                ));
            }
        }
        Ok(())
    }

    /// Retained prefix length recorded by the dropout pipeline.
    pub fn retained_tokens(&self) -> Result<usize> {
        let raw = self
            .meta
            .get(META_RETAINED_TOKENS)
            .ok_or_else(|| Error::invariant("meta.retained_tokens", "missing for a dropout_ntp pair"))?;
        raw.parse()
            .map_err(|_| Error::invariant("meta.retained_tokens", format!("not an integer: {raw:?}")))
    }
}

/// Summed natural-log sequence probabilities under policy and reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLogps {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
    pub len_chosen: usize,
    pub len_rejected: usize,
}

impl PairLogps {
    pub fn new(
        policy_chosen: f64,
        policy_rejected: f64,
        ref_chosen: f64,
        ref_rejected: f64,
        len_chosen: usize,
        len_rejected: usize,
    ) -> Result<Self> {
        let lp = Self {
            policy_chosen,
            policy_rejected,
            ref_chosen,
            ref_rejected,
            len_chosen,
            len_rejected,
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("policy_chosen", self.policy_chosen),
            ("policy_rejected", self.policy_rejected),
            ("ref_chosen", self.ref_chosen),
            ("ref_rejected", self.ref_rejected),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v > 0.0 {
                return Err(Error::invariant(
                    name,
                    format!("log-probability {v} must be finite and <= 0"),
                ));
            }
        }
        if self.len_chosen == 0 {
            return Err(Error::invariant("len_chosen", "must be >= 1"));
        }
        if self.len_rejected == 0 {
            return Err(Error::invariant("len_rejected", "must be >= 1"));
        }
        Ok(())
    }

    /// Policy minus reference log-ratio of the chosen response.
    pub fn delta_chosen(&self) -> f64 {
        self.policy_chosen - self.ref_chosen
    }

    pub fn delta_rejected(&self) -> f64 {
        self.policy_rejected - self.ref_rejected
    }
}

/// Weights of the preference, quality and generation terms of the blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_p: f64,
    pub w_q: f64,
    pub w_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_p: 0.8,
            w_q: 0.2,
            w_g: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(w_p: f64, w_q: f64, w_g: f64) -> Result<Self> {
        let w = Self { w_p, w_q, w_g };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_p", self.w_p), ("w_q", self.w_q), ("w_g", self.w_g)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.w_p == 0.0 && self.w_q == 0.0 && self.w_g == 0.0 {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

impl FromStr for LossWeights {
    type Err = Error;

    /// Parses `"w_p,w_q,w_g"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad weights {s:?}: {e}")))?;
        match parts[..] {
            [w_p, w_q, w_g] => LossWeights::new(w_p, w_q, w_g),
            _ => Err(Error::Config(format!(
                "expected three comma-separated weights, got {s:?}"
            ))),
        }
    }
}

/// Hyperparameters shared by every loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// KL penalty coefficient.
    pub beta: f64,
    /// Label-noise rate for the noise-aware DPO variants.
    pub epsilon: f64,
    /// Weight of the odds-ratio penalty in ORPO.
    pub orpo_lambda: f64,
    pub weights: LossWeights,
    /// How the BCO reward shift is tracked across batches.
    pub shift_mode: ShiftMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            epsilon: 0.1,
            orpo_lambda: 1.0,
            weights: LossWeights::default(),
            shift_mode: ShiftMode::CumulativeMean,
        }
    }
}

impl LossConfig {
    pub fn with_beta(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    /// Target log-ratio gap of IPO, `1 / (2 beta)`.
    pub fn ipo_target(&self) -> f64 {
        1.0 / (2.0 * self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 0.5), got {}",
                self.epsilon
            )));
        }
        if !(self.orpo_lambda.is_finite() && self.orpo_lambda >= 0.0) {
            return Err(Error::Config(format!(
                "orpo_lambda must be >= 0, got {}",
                self.orpo_lambda
            )));
        }
        if let ShiftMode::Ema { decay } = self.shift_mode {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::Config(format!("EMA decay must lie in [0, 1), got {decay}")));
            }
        }
        self.weights.validate()
    }
}
