//! Central-difference verification of the analytic loss partials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{LossKind, LossResult, RewardShiftState};
use crate::types::{LossConfig, PairLogps};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// RSO points closer than this to the hinge kink are not sampled.
pub const RSO_KINK_MARGIN: f64 = 1e-3;

/// One (loss, point) comparison between analytic and numeric partials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss_id: LossKind,
    pub point: PairLogps,
    pub shift: f64,
    pub value: f64,
    pub analytic: [f64; 2],
    pub numeric: [f64; 2],
    pub rel_err: [f64; 2],
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both are zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-300);
    let err = (analytic - numeric).abs();
    if err == 0.0 {
        0.0
    } else {
        err / scale
    }
}

/// Checks an arbitrary loss closure at `lp` with central differences of width `h`.
pub fn check_fn<F>(loss_id: LossKind, f: F, lp: &PairLogps, shift: f64, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&PairLogps) -> Result<LossResult>,
{
    let at = f(lp)?;
    let mut chosen_hi = *lp;
    let mut chosen_lo = *lp;
    chosen_hi.policy_chosen += h;
    chosen_lo.policy_chosen -= h;
    let mut rejected_hi = *lp;
    let mut rejected_lo = *lp;
    rejected_hi.policy_rejected += h;
    rejected_lo.policy_rejected -= h;

    let numeric = [
        (f(&chosen_hi)?.value - f(&chosen_lo)?.value) / (2.0 * h),
        (f(&rejected_hi)?.value - f(&rejected_lo)?.value) / (2.0 * h),
    ];
    let analytic = [at.d_policy_chosen, at.d_policy_rejected];
    let rel_err = [
        relative_error(analytic[0], numeric[0]),
        relative_error(analytic[1], numeric[1]),
    ];
    Ok(GradCheckReport {
        loss_id,
        point: *lp,
        shift,
        value: at.value,
        analytic,
        numeric,
        rel_err,
        max_rel_err: rel_err[0].max(rel_err[1]),
    })
}

/// Compares the analytic partials of `loss_id` against central differences.
pub fn finite_diff_check(
    loss_id: LossKind,
    lp: &PairLogps,
    cfg: &LossConfig,
    shift: &RewardShiftState,
    h: f64,
) -> Result<GradCheckReport> {
    check_fn(loss_id, |p| loss_id.evaluate(p, cfg, shift), lp, shift.running_mean, h)
}

/// A seeded random evaluation point plus reward shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub logps: PairLogps,
    pub shift: RewardShiftState,
}

/// Draws `n` evaluation points for `loss_id`.
///
/// Each sequence log-probability is a per-token mean times its length, with
/// per-token means in roughly `[-4, -0.05]` nats, the range a trained policy
/// assigns to real text. RSO points are kept off the hinge kink.
pub fn sample_points(loss_id: LossKind, cfg: &LossConfig, n: usize, seed: u64) -> Vec<SamplePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (loss_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len_chosen = rng.gen_range(1..=40);
        let len_rejected = rng.gen_range(1..=40);
        let ref_mean_chosen: f64 = rng.gen_range(-3.0..-0.1);
        let ref_mean_rejected: f64 = rng.gen_range(-3.0..-0.1);
        let policy_mean_chosen = ref_mean_chosen + rng.gen_range(-1.0..1.0);
        let policy_mean_rejected = ref_mean_rejected + rng.gen_range(-1.0..1.0);
        let (nc, nr) = (len_chosen as f64, len_rejected as f64);
        let ref_chosen = ref_mean_chosen * nc;
        let ref_rejected = ref_mean_rejected * nr;
        let policy_chosen = policy_mean_chosen * nc;
        let policy_rejected = policy_mean_rejected * nr;
        let shift = RewardShiftState {
            running_mean: rng.gen_range(-0.5..0.5),
            count: 1,
        };
        if policy_mean_chosen > -0.05 || policy_mean_rejected > -0.05 {
            continue;
        }
        let lp = PairLogps {
            policy_chosen,
            policy_rejected,
            ref_chosen,
            ref_rejected,
            len_chosen,
            len_rejected,
        };
        if loss_id == LossKind::Rso {
            let zbar = cfg.beta * (lp.delta_chosen() / len_chosen as f64 - lp.delta_rejected() / len_rejected as f64);
            if (1.0 - zbar).abs() <= RSO_KINK_MARGIN {
                continue;
            }
        }
        out.push(SamplePoint { logps: lp, shift });
    }
    out
}

/// Runs the check for `loss_id` over `n` seeded points.
pub fn check_loss(loss_id: LossKind, cfg: &LossConfig, n: usize, seed: u64, h: f64) -> Result<Vec<GradCheckReport>> {
    sample_points(loss_id, cfg, n, seed)
        .iter()
        .map(|p| finite_diff_check(loss_id, &p.logps, cfg, &p.shift, h))
        .collect()
}
