//! Per-step learning-rate and weight-decay schedules.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub wd_start: f64,
    pub wd_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            peak_lr: 5e-4,
            final_lr: 1e-6,
            warmup_epochs: 10,
            total_epochs: 100,
            wd_start: 0.04,
            wd_end: 0.4,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be positive".into()));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) exceeds total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.final_lr <= self.peak_lr) || self.final_lr < 0.0 {
            return Err(Error::Config(format!(
                "need 0 <= final_lr ({}) <= peak_lr ({})",
                self.final_lr, self.peak_lr
            )));
        }
        if !(self.wd_start <= self.wd_end) || self.wd_start < 0.0 {
            return Err(Error::Config(format!(
                "need 0 <= wd_start ({}) <= wd_end ({})",
                self.wd_start, self.wd_end
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self, steps_per_epoch: usize) -> usize {
        self.total_epochs * steps_per_epoch
    }
}

/// Half-cosine from `from` (t=0) to `to` (t=1).
fn cosine(from: f64, to: f64, t: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (PI * t.clamp(0.0, 1.0)).cos())
}

/// Linear warmup from 0 to `peak_lr`, reached at the first post-warmup step,
/// then cosine decay reaching `final_lr` at the last step.
pub fn lr_at(step: usize, steps_per_epoch: usize, sched: &ScheduleConfig) -> f64 {
    let warmup = sched.warmup_epochs * steps_per_epoch;
    let last = sched.total_steps(steps_per_epoch).saturating_sub(1);
    if step < warmup {
        return sched.peak_lr * step as f64 / warmup as f64;
    }
    if last <= warmup {
        return sched.peak_lr;
    }
    let t = (step - warmup) as f64 / (last - warmup) as f64;
    cosine(sched.peak_lr, sched.final_lr, t)
}

/// Cosine ramp from `wd_start` at step 0 to `wd_end` at the last step.
pub fn wd_at(step: usize, steps_per_epoch: usize, sched: &ScheduleConfig) -> f64 {
    let last = sched.total_steps(steps_per_epoch).saturating_sub(1);
    if last == 0 {
        return sched.wd_start;
    }
    cosine(sched.wd_start, sched.wd_end, step as f64 / last as f64)
}
