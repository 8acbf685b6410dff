//! Mini-batch preference training of a toy policy.
//!
//! Each step runs in a fixed order: reference sync (TR-DPO only, when due),
//! per-pair loss evaluation, reward-shift update, optimizer step. Per-pair
//! work fans out over a thread pool but is reduced in batch order, so runs
//! are bitwise reproducible for a given seed.

mod dynamics;
mod manifest;
mod synthetic;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dynamics::{dynamics_report, DynamicsReport, DynamicsVerdict, TrajectoryPoint};
pub use manifest::{ManifestEntry, ParamSource, RunManifest};
pub use synthetic::make_synthetic_corpus;

use crate::error::{Error, Result};
use crate::losses::{LossKind, LossResult, RewardShiftState};
use crate::optim::{AdamWState, LrSchedule};
use crate::policy::{sync_reference, ReferenceSnapshot, SequencePolicy, UnigramPolicy};
use crate::types::{LossConfig, PairLogps, PreferencePair};

/// Training objective. `TrDpo` is DPO with periodic reference re-sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Dpo,
    Rso,
    Ipo,
    Cdpo,
    RobustDpo,
    Bco,
    Sppo,
    Orpo,
    TrDpo,
    Mpo,
}

impl Objective {
    pub const ALL: [Objective; 10] = [
        Objective::Dpo,
        Objective::Rso,
        Objective::Ipo,
        Objective::Cdpo,
        Objective::RobustDpo,
        Objective::Bco,
        Objective::Sppo,
        Objective::Orpo,
        Objective::TrDpo,
        Objective::Mpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::TrDpo => "tr_dpo",
            other => other.loss_kind().as_str(),
        }
    }

    /// Pointwise loss evaluated for each pair.
    pub fn loss_kind(self) -> LossKind {
        match self {
            Objective::Dpo | Objective::TrDpo => LossKind::Dpo,
            Objective::Rso => LossKind::Rso,
            Objective::Ipo => LossKind::Ipo,
            Objective::Cdpo => LossKind::Cdpo,
            Objective::RobustDpo => LossKind::RobustDpo,
            Objective::Bco => LossKind::Bco,
            Objective::Sppo => LossKind::Sppo,
            Objective::Orpo => LossKind::Orpo,
            Objective::Mpo => LossKind::Mpo,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss_id {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub loss_cfg: LossConfig,
    pub vocab_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, training stops after this many optimizer steps, cycling
    /// through as many epochs as needed.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub tr_dpo_every_k: Option<usize>,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub min_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Softmax logits are shift-invariant, so decay is off unless asked for.
    pub apply_weight_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Mpo,
            loss_cfg: LossConfig::default(),
            vocab_size: 64,
            batch_size: 32,
            epochs: 1,
            max_steps: None,
            seed: 0,
            tr_dpo_every_k: None,
            peak_lr: 0.05,
            warmup_fraction: 0.05,
            min_lr: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.05,
            apply_weight_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_cfg.validate()?;
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        match (self.objective, self.tr_dpo_every_k) {
            (Objective::TrDpo, None) => return Err(Error::Config("tr_dpo requires tr_dpo_every_k".into())),
            (Objective::TrDpo, Some(0)) => return Err(Error::Config("tr_dpo_every_k must be >= 1".into())),
            (Objective::TrDpo, Some(_)) | (_, None) => {}
            (other, Some(_)) => {
                return Err(Error::Config(format!(
                    "tr_dpo_every_k is only valid with tr_dpo, not {other}"
                )))
            }
        }
        Ok(())
    }

    pub fn total_steps(&self, corpus_len: usize) -> usize {
        self.max_steps
            .unwrap_or(self.epochs * corpus_len.div_ceil(self.batch_size))
    }

    pub fn schedule(&self, total_steps: usize) -> LrSchedule {
        LrSchedule {
            peak_lr: self.peak_lr,
            total_steps,
            warmup_fraction: self.warmup_fraction,
            min_lr: self.min_lr,
        }
    }

    fn optimizer(&self, dim: usize) -> AdamWState {
        let mut s = AdamWState::new(dim);
        s.beta1 = self.adam_beta1;
        s.beta2 = self.adam_beta2;
        s.eps = self.adam_eps;
        s.weight_decay = if self.apply_weight_decay {
            self.weight_decay
        } else {
            0.0
        };
        s
    }
}

/// Per-step (or whole-corpus) training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_loss: f64,
    /// Fraction of pairs with a strictly positive margin; ties count as wrong.
    pub reward_accuracy: f64,
    pub mean_chosen_logp_norm: f64,
    pub mean_rejected_logp_norm: f64,
    pub reward_margin: f64,
    pub delta: f64,
}

pub const METRICS_CSV_HEADER: &str = "step,mean_loss,reward_accuracy,chosen_lp,rejected_lp,margin,delta";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.mean_loss,
            r.reward_accuracy,
            r.mean_chosen_logp_norm,
            r.mean_rejected_logp_norm,
            r.reward_margin,
            r.delta
        )?;
    }
    Ok(())
}

pub fn write_metrics_jsonl<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Loss, parameter gradient and log-probabilities for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    pub mean_loss: f64,
    pub grad: Vec<f64>,
    pub logps: Vec<PairLogps>,
}

struct PairEval {
    logps: PairLogps,
    loss: LossResult,
    grad: Vec<f64>,
}

fn pair_logps<P: SequencePolicy>(
    policy: &P,
    reference: &ReferenceSnapshot<P>,
    pair: &PreferencePair,
) -> Result<PairLogps> {
    Ok(PairLogps {
        policy_chosen: policy.sequence_logprob(&pair.chosen)?,
        policy_rejected: policy.sequence_logprob(&pair.rejected)?,
        ref_chosen: reference.sequence_logprob(&pair.chosen)?,
        ref_rejected: reference.sequence_logprob(&pair.rejected)?,
        len_chosen: pair.chosen.len(),
        len_rejected: pair.rejected.len(),
    })
}

fn eval_pair<P: SequencePolicy>(
    policy: &P,
    reference: &ReferenceSnapshot<P>,
    pair: &PreferencePair,
    loss: LossKind,
    cfg: &LossConfig,
    shift: &RewardShiftState,
) -> Result<PairEval> {
    let logps = pair_logps(policy, reference, pair)?;
    let result = loss.evaluate(&logps, cfg, shift)?;
    let mut grad = vec![0.0; policy.params().len()];
    // Reference log-probabilities are constants; only the policy terms carry gradient.
    if result.d_policy_chosen != 0.0 {
        policy.accumulate_logprob_grad(&pair.chosen, result.d_policy_chosen, &mut grad)?;
    }
    if result.d_policy_rejected != 0.0 {
        policy.accumulate_logprob_grad(&pair.rejected, result.d_policy_rejected, &mut grad)?;
    }
    Ok(PairEval {
        logps,
        loss: result,
        grad,
    })
}

/// Mean loss and mean parameter gradient over `batch`.
///
/// Pairs are evaluated in parallel; the reduction runs in batch order.
pub fn batch_gradient<P: SequencePolicy>(
    policy: &P,
    reference: &ReferenceSnapshot<P>,
    batch: &[&PreferencePair],
    loss: LossKind,
    cfg: &LossConfig,
    shift: &RewardShiftState,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(Error::Empty("batch has no pairs"));
    }
    let evals: Vec<PairEval> = batch
        .par_iter()
        .map(|pair| eval_pair(policy, reference, pair, loss, cfg, shift))
        .collect::<Result<_>>()?;
    let n = evals.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut loss_sum = 0.0;
    for e in &evals {
        loss_sum += e.loss.value;
        for (g, x) in grad.iter_mut().zip(&e.grad) {
            *g += x;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(BatchEval {
        mean_loss: loss_sum / n,
        grad,
        logps: evals.into_iter().map(|e| e.logps).collect(),
    })
}

fn summarize(step: usize, mean_loss: f64, logps: &[PairLogps], beta: f64, delta: f64) -> MetricsRow {
    let n = logps.len() as f64;
    let mut correct = 0usize;
    let (mut chosen, mut rejected, mut margin) = (0.0, 0.0, 0.0);
    for lp in logps {
        let z = beta * (lp.delta_chosen() - lp.delta_rejected());
        if z > 0.0 {
            correct += 1;
        }
        margin += z;
        chosen += lp.policy_chosen / lp.len_chosen as f64;
        rejected += lp.policy_rejected / lp.len_rejected as f64;
    }
    MetricsRow {
        step,
        mean_loss,
        reward_accuracy: correct as f64 / n,
        mean_chosen_logp_norm: chosen / n,
        mean_rejected_logp_norm: rejected / n,
        reward_margin: margin / n,
        delta,
    }
}

/// Whole-corpus metrics for `policy` against `reference`.
pub fn evaluate<P: SequencePolicy>(
    corpus: &[PreferencePair],
    policy: &P,
    reference: &ReferenceSnapshot<P>,
    loss: LossKind,
    cfg: &LossConfig,
    shift: &RewardShiftState,
    step: usize,
) -> Result<MetricsRow> {
    let batch: Vec<&PreferencePair> = corpus.iter().collect();
    let eval = batch_gradient(policy, reference, &batch, loss, cfg, shift)?;
    Ok(summarize(
        step,
        eval.mean_loss,
        &eval.logps,
        cfg.beta,
        shift.running_mean,
    ))
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput<P = UnigramPolicy> {
    pub policy: P,
    /// One row per optimizer step, measured on that step's batch before the update.
    pub metrics: Vec<MetricsRow>,
    /// Whole-corpus metrics before the first step.
    pub initial_eval: MetricsRow,
    /// Whole-corpus metrics after the last step.
    pub final_eval: MetricsRow,
    /// Whole-corpus metrics after each completed epoch.
    pub epoch_evals: Vec<MetricsRow>,
    pub shift: RewardShiftState,
}

fn check_corpus(corpus: &[PreferencePair], vocab: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus has no pairs"));
    }
    for (idx, pair) in corpus.iter().enumerate() {
        let located = |e: Error| Error::Line {
            line: idx + 1,
            message: e.to_string(),
        };
        pair.validate().map_err(located)?;
        pair.chosen.check_vocab(vocab).map_err(located)?;
        pair.rejected.check_vocab(vocab).map_err(located)?;
    }
    Ok(())
}

/// Trains a uniform-initialized unigram policy.
pub fn train(corpus: &[PreferencePair], cfg: &TrainConfig) -> Result<TrainOutput> {
    train_policy(corpus, cfg, UnigramPolicy::uniform(cfg.vocab_size)?)
}

/// Trains `init` on `corpus`. The reference starts as a copy of `init`.
pub fn train_policy<P: SequencePolicy>(
    corpus: &[PreferencePair],
    cfg: &TrainConfig,
    init: P,
) -> Result<TrainOutput<P>> {
    cfg.validate()?;
    if init.vocab_size() != cfg.vocab_size {
        return Err(Error::DimensionMismatch {
            expected: cfg.vocab_size,
            actual: init.vocab_size(),
        });
    }
    check_corpus(corpus, cfg.vocab_size)?;

    let loss = cfg.objective.loss_kind();
    let lcfg = &cfg.loss_cfg;
    let total_steps = cfg.total_steps(corpus.len());
    let schedule = cfg.schedule(total_steps);
    schedule.validate()?;

    let mut policy = init;
    let mut reference = ReferenceSnapshot::capture(&policy, 0);
    let mut shift = RewardShiftState::default();
    let mut adam = cfg.optimizer(policy.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial_eval = evaluate(corpus, &policy, &reference, loss, lcfg, &shift, 0)?;
    let mut metrics = Vec::with_capacity(total_steps);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let n_chunks = corpus.len().div_ceil(cfg.batch_size);
    let mut epoch_evals = Vec::new();
    let mut step = 0;

    while step < total_steps {
        order.shuffle(&mut rng);
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            seen += 1;
            if let (Objective::TrDpo, Some(k)) = (cfg.objective, cfg.tr_dpo_every_k) {
                reference = sync_reference(&policy, reference, step, k)?;
            }
            let batch: Vec<&PreferencePair> = chunk.iter().map(|&i| &corpus[i]).collect();
            let eval = batch_gradient(&policy, &reference, &batch, loss, lcfg, &shift)?;
            metrics.push(summarize(
                step,
                eval.mean_loss,
                &eval.logps,
                lcfg.beta,
                shift.running_mean,
            ));
            if loss.uses_shift() {
                shift = shift.update(&eval.logps, lcfg)?;
            }
            let lr = schedule.lr_at(step)?;
            adam.step(policy.params_mut(), &eval.grad, lr)?;
            if step == total_steps {
                break;
            }
        }
        if seen == n_chunks {
            epoch_evals.push(evaluate(corpus, &policy, &reference, loss, lcfg, &shift, step)?);
        }
    }

    let final_eval = evaluate(corpus, &policy, &reference, loss, lcfg, &shift, step)?;
    Ok(TrainOutput {
        policy,
        metrics,
        initial_eval,
        final_eval,
        epoch_evals,
        shift,
    })
}
