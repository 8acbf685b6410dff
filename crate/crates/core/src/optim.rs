//! AdamW with decoupled weight decay, and a linear-warmup + cosine-decay schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moment estimates and hyperparameters of AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWState {
    /// Fresh state for `dim` parameters with beta1 0.9, beta2 0.999,
    /// eps 1e-8 and weight decay 0.05.
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// One bias-corrected AdamW update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        let dim = self.m.len();
        for actual in [params.len(), grads.len(), self.v.len()] {
            if actual != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..dim {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let theta = params[i];
            params[i] = theta - lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamWState::step`].
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}

/// Linear warmup to `peak_lr`, then cosine decay to `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub min_lr: f64,
}

impl LrSchedule {
    /// Schedule with 5% warmup and a floor of zero.
    pub fn new(peak_lr: f64, total_steps: usize) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_fraction: 0.05,
            min_lr: 0.0,
        }
    }

    /// `ceil(warmup_fraction * total_steps)`, at least 1.
    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.total_steps as f64).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::Config(format!("peak_lr must be > 0, got {}", self.peak_lr)));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return Err(Error::Config(format!(
                "min_lr must lie in [0, peak_lr], got {}",
                self.min_lr
            )));
        }
        if self.warmup_steps() >= self.total_steps {
            return Err(Error::Config(format!(
                "total_steps ({}) must exceed the warmup length ({})",
                self.total_steps,
                self.warmup_steps()
            )));
        }
        Ok(())
    }

    /// Warmup branch evaluated at a real-valued step.
    pub fn warmup_ramp(&self, t: f64) -> f64 {
        self.peak_lr * t / self.warmup_steps() as f64
    }

    /// Cosine branch evaluated at a real-valued step.
    pub fn cosine_decay(&self, t: f64) -> f64 {
        let w = self.warmup_steps() as f64;
        let progress = (t - w) / (self.total_steps as f64 - w);
        self.min_lr + (self.peak_lr - self.min_lr) * (1.0 + (PI * progress).cos()) / 2.0
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        self.validate()?;
        let t = step as f64;
        Ok(if step <= self.warmup_steps() {
            self.warmup_ramp(t)
        } else {
            self.cosine_decay(t)
        })
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> Result<f64> {
    schedule.lr_at(step)
}
