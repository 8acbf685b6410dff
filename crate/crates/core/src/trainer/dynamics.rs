use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub dpo_chosen_lp: f64,
    pub mpo_chosen_lp: f64,
    pub dpo_margin: f64,
    pub mpo_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsVerdict {
    /// Both runs produced identical metrics.
    NoDifference,
    /// DPO's chosen log-probability ended below its start; the blend's did not.
    DpoDeclinedMpoHeld,
    BothDeclined,
    NeitherDeclined,
    MpoDeclinedDpoHeld,
}

impl DynamicsVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            DynamicsVerdict::NoDifference => "no difference",
            DynamicsVerdict::DpoDeclinedMpoHeld => "dpo chosen log-prob declined while mpo did not",
            DynamicsVerdict::BothDeclined => "chosen log-prob declined in both runs",
            DynamicsVerdict::NeitherDeclined => "chosen log-prob declined in neither run",
            DynamicsVerdict::MpoDeclinedDpoHeld => "mpo chosen log-prob declined while dpo did not",
        }
    }
}

/// Side-by-side chosen log-probability and margin trajectories of a DPO run
/// and a blended run on the same corpus and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub trajectory: Vec<TrajectoryPoint>,
    pub dpo_chosen_start: f64,
    pub dpo_chosen_end: f64,
    pub mpo_chosen_start: f64,
    pub mpo_chosen_end: f64,
    /// True when DPO's chosen log-probability fell while the blend's did not.
    pub dpo_collapse_only: bool,
    pub verdict: DynamicsVerdict,
}

impl DynamicsReport {
    /// Fixed-width text table followed by the verdict line.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>14}  {:>14}  {:>12}  {:>12}",
            "step", "dpo_chosen_lp", "mpo_chosen_lp", "dpo_margin", "mpo_margin"
        );
        for p in &self.trajectory {
            let _ = writeln!(
                out,
                "{:>6}  {:>14.6}  {:>14.6}  {:>12.6}  {:>12.6}",
                p.step, p.dpo_chosen_lp, p.mpo_chosen_lp, p.dpo_margin, p.mpo_margin
            );
        }
        let _ = writeln!(
            out,
            "dpo chosen_lp: {:.6} -> {:.6}",
            self.dpo_chosen_start, self.dpo_chosen_end
        );
        let _ = writeln!(
            out,
            "mpo chosen_lp: {:.6} -> {:.6}",
            self.mpo_chosen_start, self.mpo_chosen_end
        );
        let _ = writeln!(out, "verdict: {}", self.verdict.as_str());
        out
    }
}

pub fn dynamics_report(dpo: &[MetricsRow], mpo: &[MetricsRow]) -> Result<DynamicsReport> {
    if dpo.len() != mpo.len() {
        return Err(Error::DimensionMismatch {
            expected: dpo.len(),
            actual: mpo.len(),
        });
    }
    let (Some(d0), Some(d1), Some(m0), Some(m1)) = (dpo.first(), dpo.last(), mpo.first(), mpo.last()) else {
        return Err(Error::Empty("dynamics report needs at least one metrics row"));
    };
    let mut trajectory = Vec::with_capacity(dpo.len());
    for (d, m) in dpo.iter().zip(mpo) {
        if d.step != m.step {
            return Err(Error::Config(format!(
                "metrics rows out of step: dpo {} vs mpo {}",
                d.step, m.step
            )));
        }
        trajectory.push(TrajectoryPoint {
            step: d.step,
            dpo_chosen_lp: d.mean_chosen_logp_norm,
            mpo_chosen_lp: m.mean_chosen_logp_norm,
            dpo_margin: d.reward_margin,
            mpo_margin: m.reward_margin,
        });
    }
    let dpo_declined = d1.mean_chosen_logp_norm < d0.mean_chosen_logp_norm;
    let mpo_declined = m1.mean_chosen_logp_norm < m0.mean_chosen_logp_norm;
    let verdict = if dpo == mpo {
        DynamicsVerdict::NoDifference
    } else {
        match (dpo_declined, mpo_declined) {
            (true, false) => DynamicsVerdict::DpoDeclinedMpoHeld,
            (true, true) => DynamicsVerdict::BothDeclined,
            (false, false) => DynamicsVerdict::NeitherDeclined,
            (false, true) => DynamicsVerdict::MpoDeclinedDpoHeld,
        }
    };
    Ok(DynamicsReport {
        trajectory,
        dpo_chosen_start: d0.mean_chosen_logp_norm,
        dpo_chosen_end: d1.mean_chosen_logp_norm,
        mpo_chosen_start: m0.mean_chosen_logp_norm,
        mpo_chosen_end: m1.mean_chosen_logp_norm,
        dpo_collapse_only: verdict == DynamicsVerdict::DpoDeclinedMpoHeld,
        verdict,
    })
}
