//! Preference-optimization objectives with exact partial derivatives.
//!
//! Every loss consumes a [`PairLogps`] and returns a [`LossResult`]: the
//! scalar value plus its partial derivatives with respect to the two policy
//! log-probabilities. Reference log-probabilities are constants.
//!
//! Notation used throughout:
//!
//! ```text
//! dc = policy_chosen - ref_chosen        dr = policy_rejected - ref_rejected
//! z  = beta * (dc - dr)
//! softplus(t) = ln(1 + e^t),  sigmoid(t) = 1 / (1 + e^-t)
//! ```
//!
//! DPO, BCO, cDPO, RobustDPO and SPPO work on summed sequence log-probabilities.
//! RSO, IPO and ORPO use per-token averages (`dc / len_chosen` etc.), as does
//! the SFT generation loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LossConfig, PairLogps};

/// ORPO clamps per-token probabilities to at most `1 - ORPO_PROB_CLAMP`.
pub const ORPO_PROB_CLAMP: f64 = 1e-12;

/// Loss value and partials with respect to `policy_chosen` / `policy_rejected`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub value: f64,
    pub d_policy_chosen: f64,
    pub d_policy_rejected: f64,
}

impl LossResult {
    fn scaled(self, w: f64) -> Self {
        Self {
            value: w * self.value,
            d_policy_chosen: w * self.d_policy_chosen,
            d_policy_rejected: w * self.d_policy_rejected,
        }
    }

    fn plus(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            d_policy_chosen: self.d_policy_chosen + other.d_policy_chosen,
            d_policy_rejected: self.d_policy_rejected + other.d_policy_rejected,
        }
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Logistic function, stable for large `|t|`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn margin(lp: &PairLogps, beta: f64) -> f64 {
    beta * (lp.delta_chosen() - lp.delta_rejected())
}

/// Builds a result whose value is a function of `z = beta (dc - dr)` alone.
fn through_margin(value: f64, d_value_dz: f64, beta: f64) -> LossResult {
    LossResult {
        value,
        d_policy_chosen: beta * d_value_dz,
        d_policy_rejected: -beta * d_value_dz,
    }
}

/// `-ln sigmoid(z)`.
pub fn dpo_loss(lp: &PairLogps, cfg: &LossConfig) -> LossResult {
    let z = margin(lp, cfg.beta);
    through_margin(softplus(-z), -sigmoid(-z), cfg.beta)
}

/// Binary-classifier quality loss with reward shift `delta`.
///
/// Chosen and rejected rewards are scored independently, which makes this
/// loss sensitive to the absolute level of each reward (unlike DPO).
pub fn bco_loss(lp: &PairLogps, cfg: &LossConfig, shift: &RewardShiftState) -> LossResult {
    let beta = cfg.beta;
    let rc = beta * lp.delta_chosen() - shift.running_mean;
    let rr = beta * lp.delta_rejected() - shift.running_mean;
    LossResult {
        value: softplus(-rc) + softplus(rr),
        d_policy_chosen: -beta * sigmoid(-rc),
        d_policy_rejected: beta * sigmoid(rr),
    }
}

/// Length-normalized negative log-likelihood of the chosen response.
pub fn sft_gen_loss(lp: &PairLogps) -> LossResult {
    let n = lp.len_chosen as f64;
    LossResult {
        value: -lp.policy_chosen / n,
        d_policy_chosen: -1.0 / n,
        d_policy_rejected: 0.0,
    }
}

/// Weighted blend of DPO, BCO and the SFT generation loss.
pub fn mpo_loss(lp: &PairLogps, cfg: &LossConfig, shift: &RewardShiftState) -> LossResult {
    let w = cfg.weights;
    let mut total = LossResult {
        value: 0.0,
        d_policy_chosen: 0.0,
        d_policy_rejected: 0.0,
    };
    // Zero-weight terms are skipped so reductions to a single term are exact.
    if w.w_p != 0.0 {
        total = total.plus(dpo_loss(lp, cfg).scaled(w.w_p));
    }
    if w.w_q != 0.0 {
        total = total.plus(bco_loss(lp, cfg, shift).scaled(w.w_q));
    }
    if w.w_g != 0.0 {
        total = total.plus(sft_gen_loss(lp).scaled(w.w_g));
    }
    total
}

/// Hinge loss `max(0, 1 - z̄)` on the length-normalized margin.
pub fn rso_loss(lp: &PairLogps, cfg: &LossConfig) -> LossResult {
    let (nc, nr) = (lp.len_chosen as f64, lp.len_rejected as f64);
    let zbar = cfg.beta * (lp.delta_chosen() / nc - lp.delta_rejected() / nr);
    let slack = 1.0 - zbar;
    if slack > 0.0 {
        LossResult {
            value: slack,
            d_policy_chosen: -cfg.beta / nc,
            d_policy_rejected: cfg.beta / nr,
        }
    } else {
        LossResult {
            value: 0.0,
            d_policy_chosen: 0.0,
            d_policy_rejected: 0.0,
        }
    }
}

/// Squared distance of the averaged log-ratio gap from `1 / (2 beta)`.
pub fn ipo_loss(lp: &PairLogps, cfg: &LossConfig) -> LossResult {
    let (nc, nr) = (lp.len_chosen as f64, lp.len_rejected as f64);
    let gap = lp.delta_chosen() / nc - lp.delta_rejected() / nr;
    let resid = gap - cfg.ipo_target();
    LossResult {
        value: resid * resid,
        d_policy_chosen: 2.0 * resid / nc,
        d_policy_rejected: -2.0 * resid / nr,
    }
}

/// Conservative DPO: labels flipped with probability `epsilon`.
pub fn cdpo_loss(lp: &PairLogps, cfg: &LossConfig) -> LossResult {
    let z = margin(lp, cfg.beta);
    let eps = cfg.epsilon;
    let value = (1.0 - eps) * softplus(-z) + eps * softplus(z);
    let dz = -(1.0 - eps) * sigmoid(-z) + eps * sigmoid(z);
    through_margin(value, dz, cfg.beta)
}

/// Unbiased DPO estimate under label noise `epsilon`; requires `epsilon < 0.5`.
pub fn robust_dpo_loss(lp: &PairLogps, cfg: &LossConfig) -> Result<LossResult> {
    let eps = cfg.epsilon;
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Config(format!("robust DPO needs 0 <= epsilon < 0.5, got {eps}")));
    }
    let z = margin(lp, cfg.beta);
    let norm = 1.0 - 2.0 * eps;
    let value = ((1.0 - eps) * softplus(-z) - eps * softplus(z)) / norm;
    let dz = (-(1.0 - eps) * sigmoid(-z) - eps * sigmoid(z)) / norm;
    Ok(through_margin(value, dz, cfg.beta))
}

/// Squared-error pull of the chosen reward to 1/2 and the rejected to -1/2.
pub fn sppo_loss(lp: &PairLogps, cfg: &LossConfig) -> LossResult {
    let beta = cfg.beta;
    let ec = beta * lp.delta_chosen() - 0.5;
    let er = beta * lp.delta_rejected() + 0.5;
    LossResult {
        value: ec * ec + er * er,
        d_policy_chosen: 2.0 * beta * ec,
        d_policy_rejected: 2.0 * beta * er,
    }
}

/// Log-odds of the per-token probability `exp(mean_logp)` and its derivative
/// with respect to `mean_logp`.
fn log_odds(mean_logp: f64) -> (f64, f64) {
    let max_mean = (-ORPO_PROB_CLAMP).ln_1p();
    if mean_logp > max_mean {
        // Clamped region: constant in the input.
        let a = max_mean;
        return (a - (-a.exp_m1()).ln(), 0.0);
    }
    let one_minus_p = -mean_logp.exp_m1();
    (mean_logp - one_minus_p.ln(), 1.0 / one_minus_p)
}

/// Reference-free odds-ratio preference loss appended to the chosen NLL.
pub fn orpo_loss(lp: &PairLogps, lambda: f64) -> LossResult {
    let (nc, nr) = (lp.len_chosen as f64, lp.len_rejected as f64);
    let (lo_c, dlo_c) = log_odds(lp.policy_chosen / nc);
    let (lo_r, dlo_r) = log_odds(lp.policy_rejected / nr);
    let gap = lo_c - lo_r;
    let s = sigmoid(-gap);
    LossResult {
        value: -lp.policy_chosen / nc + lambda * softplus(-gap),
        d_policy_chosen: -1.0 / nc - lambda * s * dlo_c / nc,
        d_policy_rejected: lambda * s * dlo_r / nr,
    }
}

/// Tracking mode for the BCO reward shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ShiftMode {
    /// Exact mean of every reward observed so far.
    CumulativeMean,
    /// Exponential moving average, updated once per reward.
    Ema { decay: f64 },
}

/// Reward shift `delta` carried across batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardShiftState {
    pub running_mean: f64,
    pub count: u64,
}

impl RewardShiftState {
    /// Folds the chosen and rejected rewards of `batch` into the shift.
    ///
    /// Observations are consumed one at a time, chosen before rejected, so the
    /// result does not depend on how a stream is split into batches.
    pub fn update(&self, batch: &[PairLogps], cfg: &LossConfig) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("reward-shift update needs at least one pair"));
        }
        let mut next = *self;
        for lp in batch {
            next.observe(cfg.beta * lp.delta_chosen(), cfg.shift_mode);
            next.observe(cfg.beta * lp.delta_rejected(), cfg.shift_mode);
        }
        Ok(next)
    }

    fn observe(&mut self, reward: f64, mode: ShiftMode) {
        self.count += 1;
        match mode {
            ShiftMode::CumulativeMean => {
                self.running_mean += (reward - self.running_mean) / self.count as f64;
            }
            ShiftMode::Ema { decay } => {
                self.running_mean = decay * self.running_mean + (1.0 - decay) * reward;
            }
        }
    }
}

/// Free-function form of [`RewardShiftState::update`].
pub fn update_reward_shift(
    shift: &RewardShiftState,
    batch: &[PairLogps],
    cfg: &LossConfig,
) -> Result<RewardShiftState> {
    shift.update(batch, cfg)
}

/// Every loss the laboratory can evaluate pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dpo,
    Rso,
    Ipo,
    Cdpo,
    RobustDpo,
    Bco,
    Sppo,
    Orpo,
    Mpo,
    SftGen,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::Dpo,
        LossKind::Rso,
        LossKind::Ipo,
        LossKind::Cdpo,
        LossKind::RobustDpo,
        LossKind::Bco,
        LossKind::Sppo,
        LossKind::Orpo,
        LossKind::Mpo,
        LossKind::SftGen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Dpo => "dpo",
            LossKind::Rso => "rso",
            LossKind::Ipo => "ipo",
            LossKind::Cdpo => "cdpo",
            LossKind::RobustDpo => "robust_dpo",
            LossKind::Bco => "bco",
            LossKind::Sppo => "sppo",
            LossKind::Orpo => "orpo",
            LossKind::Mpo => "mpo",
            LossKind::SftGen => "sft_gen",
        }
    }

    /// Whether the loss reads the reward shift.
    pub fn uses_shift(self) -> bool {
        matches!(self, LossKind::Bco | LossKind::Mpo)
    }

    pub fn evaluate(self, lp: &PairLogps, cfg: &LossConfig, shift: &RewardShiftState) -> Result<LossResult> {
        Ok(match self {
            LossKind::Dpo => dpo_loss(lp, cfg),
            LossKind::Rso => rso_loss(lp, cfg),
            LossKind::Ipo => ipo_loss(lp, cfg),
            LossKind::Cdpo => cdpo_loss(lp, cfg),
            LossKind::RobustDpo => robust_dpo_loss(lp, cfg)?,
            LossKind::Bco => bco_loss(lp, cfg, shift),
            LossKind::Sppo => sppo_loss(lp, cfg),
            LossKind::Orpo => orpo_loss(lp, cfg.orpo_lambda),
            LossKind::Mpo => mpo_loss(lp, cfg, shift),
            LossKind::SftGen => sft_gen_loss(lp),
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?}")))
    }
}
