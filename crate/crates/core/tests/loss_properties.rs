use mpolab_core::gradcheck::{check_loss, DEFAULT_STEP, DEFAULT_TOLERANCE};
use mpolab_core::losses::{
    bco_loss, cdpo_loss, dpo_loss, ipo_loss, orpo_loss, robust_dpo_loss, rso_loss, softplus, sppo_loss,
};
use mpolab_core::{LossConfig, LossKind, PairLogps, RewardShiftState};
use proptest::prelude::*;

fn logps() -> impl Strategy<Value = PairLogps> {
    (
        -80.0..-0.5f64,
        -80.0..-0.5f64,
        -80.0..-0.5f64,
        -80.0..-0.5f64,
        1usize..50,
        1usize..50,
    )
        .prop_map(|(pc, pr, rc, rr, lc, lr)| PairLogps {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: rc,
            ref_rejected: rr,
            len_chosen: lc,
            len_rejected: lr,
        })
}

fn cfg_strategy() -> impl Strategy<Value = LossConfig> {
    (0.01..1.0f64, 0.0..0.49f64).prop_map(|(beta, epsilon)| LossConfig {
        beta,
        epsilon,
        ..LossConfig::default()
    })
}

fn swapped(lp: &PairLogps) -> PairLogps {
    PairLogps {
        policy_chosen: lp.policy_rejected,
        policy_rejected: lp.policy_chosen,
        ref_chosen: lp.ref_rejected,
        ref_rejected: lp.ref_chosen,
        len_chosen: lp.len_rejected,
        len_rejected: lp.len_chosen,
    }
}

proptest! {
    #[test]
    fn dpo_depends_only_on_margin(lp in logps(), cfg in cfg_strategy(), c in -5.0..5.0f64) {
        let base = dpo_loss(&lp, &cfg).value;
        let mut all = lp;
        all.policy_chosen += c;
        all.policy_rejected += c;
        all.ref_chosen += c;
        all.ref_rejected += c;
        prop_assert!((dpo_loss(&all, &cfg).value - base).abs() <= 1e-12);
        let mut policy_only = lp;
        policy_only.policy_chosen += c;
        policy_only.policy_rejected += c;
        prop_assert!((dpo_loss(&policy_only, &cfg).value - base).abs() <= 1e-12);
    }

    #[test]
    fn dpo_strictly_decreasing_in_margin(lp in logps(), cfg in cfg_strategy(), bump in 0.01..3.0f64) {
        let mut up = lp;
        up.policy_rejected -= bump;
        let z = cfg.beta * (lp.delta_chosen() - lp.delta_rejected());
        prop_assume!(z < 30.0);
        prop_assert!(dpo_loss(&up, &cfg).value < dpo_loss(&lp, &cfg).value);
    }

    #[test]
    fn monotone_losses_have_expected_gradient_signs(lp in logps(), cfg in cfg_strategy(), d in -0.5..0.5f64) {
        let shift = RewardShiftState { running_mean: d, count: 3 };
        let results = [
            dpo_loss(&lp, &cfg),
            bco_loss(&lp, &cfg, &shift),
            robust_dpo_loss(&lp, &cfg).unwrap(),
            rso_loss(&lp, &cfg),
            orpo_loss(&lp, 1.0),
        ];
        for r in results {
            prop_assert!(r.value.is_finite());
            prop_assert!(r.d_policy_chosen <= 0.0, "{r:?}");
            prop_assert!(r.d_policy_rejected >= 0.0, "{r:?}");
        }
    }

    #[test]
    fn conditional_gradient_signs(lp in logps(), cfg in cfg_strategy()) {
        let z = cfg.beta * (lp.delta_chosen() - lp.delta_rejected());
        // cDPO keeps DPO's direction until the flipped-label term dominates.
        if cfg.epsilon > 0.0 && z < ((1.0 - cfg.epsilon) / cfg.epsilon).ln() {
            let r = cdpo_loss(&lp, &cfg);
            prop_assert!(r.d_policy_chosen <= 0.0 && r.d_policy_rejected >= 0.0);
        }
        let gap = lp.delta_chosen() / lp.len_chosen as f64 - lp.delta_rejected() / lp.len_rejected as f64;
        if gap < cfg.ipo_target() {
            let r = ipo_loss(&lp, &cfg);
            prop_assert!(r.d_policy_chosen <= 0.0 && r.d_policy_rejected >= 0.0);
        }
        if cfg.beta * lp.delta_chosen() < 0.5 {
            prop_assert!(sppo_loss(&lp, &cfg).d_policy_chosen <= 0.0);
        }
        if cfg.beta * lp.delta_rejected() > -0.5 {
            prop_assert!(sppo_loss(&lp, &cfg).d_policy_rejected >= 0.0);
        }
    }

    #[test]
    fn cdpo_blend_identity(lp in logps(), cfg in cfg_strategy()) {
        let z = cfg.beta * (lp.delta_chosen() - lp.delta_rejected());
        let total = cdpo_loss(&lp, &cfg).value + cdpo_loss(&swapped(&lp), &cfg).value;
        prop_assert!((total - (softplus(-z) + softplus(z))).abs() <= 1e-12 * (1.0 + z.abs()));
    }

    #[test]
    fn bco_symmetric_rewards(a in -40.0..40.0f64, cfg in cfg_strategy()) {
        let lp = PairLogps {
            policy_chosen: -50.0 + a,
            policy_rejected: -50.0 - a,
            ref_chosen: -50.0,
            ref_rejected: -50.0,
            len_chosen: 3,
            len_rejected: 3,
        };
        let v = bco_loss(&lp, &cfg, &RewardShiftState::default()).value;
        prop_assert!((v - 2.0 * softplus(-cfg.beta * a)).abs() <= 1e-12);
    }

    #[test]
    fn sppo_non_negative_and_zero_only_at_targets(lp in logps(), cfg in cfg_strategy()) {
        let v = sppo_loss(&lp, &cfg).value;
        prop_assert!(v >= 0.0);
        if v == 0.0 {
            prop_assert_eq!(cfg.beta * lp.delta_chosen(), 0.5);
        }
    }

    #[test]
    fn shift_is_batch_size_invariant(
        deltas in prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64), 1..60),
        split in 1usize..10,
    ) {
        let cfg = LossConfig::default();
        let stream: Vec<PairLogps> = deltas
            .iter()
            .map(|&(dc, dr)| PairLogps {
                policy_chosen: -40.0 + dc,
                policy_rejected: -40.0 + dr,
                ref_chosen: -40.0,
                ref_rejected: -40.0,
                len_chosen: 1,
                len_rejected: 1,
            })
            .collect();
        let whole = RewardShiftState::default().update(&stream, &cfg).unwrap();
        let mut chunked = RewardShiftState::default();
        for chunk in stream.chunks(split) {
            chunked = chunked.update(chunk, &cfg).unwrap();
        }
        prop_assert_eq!(whole, chunked);
        let exact: f64 = deltas.iter().map(|&(dc, dr)| 0.1 * dc + 0.1 * dr).sum::<f64>()
            / (2 * deltas.len()) as f64;
        prop_assert!((whole.running_mean - exact).abs() <= 1e-12);
        prop_assert_eq!(whole.count, 2 * deltas.len() as u64);
    }
}

#[test]
fn bco_is_not_margin_invariant() {
    let cfg = LossConfig::default();
    let lp = PairLogps::new(-12.0, -20.0, -15.0, -18.0, 4, 6).unwrap();
    let mut shifted = lp;
    shifted.policy_chosen += 2.0;
    shifted.policy_rejected += 2.0;
    let zero = RewardShiftState::default();
    assert!((dpo_loss(&lp, &cfg).value - dpo_loss(&shifted, &cfg).value).abs() <= 1e-12);
    assert!((bco_loss(&lp, &cfg, &zero).value - bco_loss(&shifted, &cfg, &zero).value).abs() > 1e-6);
}

#[test]
fn every_loss_passes_gradient_check() {
    let cfg = LossConfig::default();
    for kind in LossKind::ALL {
        let reports = check_loss(kind, &cfg, 100, 20_240_601, DEFAULT_STEP).unwrap();
        let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        assert!(worst <= DEFAULT_TOLERANCE, "{kind}: max rel err {worst}");
    }
}
