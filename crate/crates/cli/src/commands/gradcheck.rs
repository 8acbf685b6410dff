use std::io::Write;

use mpolab_core::gradcheck::{check_fn, sample_points, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use mpolab_core::{LossConfig, LossKind};

use crate::args::{merge, GradcheckArgs};
use crate::error::{CliError, CliResult};
use crate::{emit, Globals};

pub const DEFAULT_POINTS: usize = 100;

fn parse_losses(s: Option<&str>) -> CliResult<Vec<LossKind>> {
    let Some(s) = s else {
        return Ok(LossKind::ALL.to_vec());
    };
    s.split(',')
        .map(|name| {
            let name = name.trim();
            LossKind::ALL
                .into_iter()
                .find(|k| k.as_str() == name)
                .ok_or_else(|| CliError::Usage(format!("unknown loss {name:?}")))
        })
        .collect()
}

/// Checks `points` seeded points of `loss`. With `perturb` set, the analytic
/// partials are scaled by `1 + perturb` first.
pub fn check(
    loss: LossKind,
    cfg: &LossConfig,
    points: usize,
    seed: u64,
    h: f64,
    perturb: Option<f64>,
) -> CliResult<Vec<GradCheckReport>> {
    let scale = 1.0 + perturb.unwrap_or(0.0);
    sample_points(loss, cfg, points, seed)
        .iter()
        .map(|p| {
            let f = |lp: &_| {
                let mut r = loss.evaluate(lp, cfg, &p.shift)?;
                r.d_policy_chosen *= scale;
                r.d_policy_rejected *= scale;
                Ok(r)
            };
            check_fn(loss, f, &p.logps, p.shift.running_mean, h).map_err(CliError::run)
        })
        .collect()
}

pub fn run(flags: &GradcheckArgs, file: &GradcheckArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let (a, _) = merge(flags, file)?;
    let losses = parse_losses(a.loss.as_deref())?;
    let points = a.points.unwrap_or(DEFAULT_POINTS);
    let h = a.h.unwrap_or(DEFAULT_STEP);
    let tol = a.tol.unwrap_or(DEFAULT_TOLERANCE);
    if points == 0 {
        return Err(CliError::Usage("--points must be at least 1".into()));
    }
    if !(h.is_finite() && h > 0.0) || !(tol.is_finite() && tol >= 0.0) {
        return Err(CliError::Usage("--h must be > 0 and --tol >= 0".into()));
    }
    let cfg = LossConfig {
        beta: a.beta.unwrap_or(LossConfig::default().beta),
        ..LossConfig::default()
    };
    cfg.validate().map_err(CliError::usage)?;

    let mut failed = Vec::new();
    for loss in losses {
        let reports = check(loss, &cfg, points, g.seed, h, a.perturb_analytic)?;
        let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        let bad = reports.iter().filter(|r| !r.passes(tol)).count();
        let verdict = if bad == 0 { "PASS" } else { "FAIL" };
        emit(
            stdout,
            &format!(
                "{verdict} {:<10} points={points} max_rel_err={worst:.3e} failing={bad}\n",
                loss.as_str()
            ),
        )?;
        if bad > 0 {
            failed.push(loss.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed for {} (tolerance {tol:e})",
            failed.join(", ")
        )))
    }
}
