//! Scalar schedules: consistency ramp-up, polynomial learning rate, EMA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Iterations over which the consistency weight ramps up.
    pub rampup_iters: u64,
    /// Consistency weight reached at the end of the ramp (λ_u).
    pub lambda_u_max: f64,
    /// EMA decay ω.
    pub ema_decay: f64,
    pub base_lr: f64,
    pub lr_pow: f64,
    pub max_iters: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            rampup_iters: 17_000,
            lambda_u_max: 1.0,
            ema_decay: 0.99,
            base_lr: 0.01,
            lr_pow: 0.9,
            max_iters: 30_000,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.rampup_iters > 0
            && self.max_iters > 0
            && self.lambda_u_max > 0.0
            && self.base_lr > 0.0
            && self.lr_pow > 0.0;
        if !positive {
            return Err(Error::Config(format!("schedule constants must be positive: {self:?}")));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("EMA decay {} outside (0, 1)", self.ema_decay)));
        }
        Ok(())
    }
}

/// Consistency weight `λ_u · exp(−5 (1 − min(t/T, 1))²)`.
pub fn consistency_rampup(iter: u64, cfg: &ScheduleConfig) -> f64 {
    let progress = (iter as f64 / cfg.rampup_iters as f64).min(1.0);
    let phase = 1.0 - progress;
    cfg.lambda_u_max * (-5.0 * phase * phase).exp()
}

/// `base_lr · (1 − t/max_iters)^pow`, zero from `max_iters` on.
pub fn poly_lr(iter: u64, cfg: &ScheduleConfig) -> f64 {
    let remaining = (1.0 - iter as f64 / cfg.max_iters as f64).max(0.0);
    cfg.base_lr * remaining.powf(cfg.lr_pow)
}

/// In-place `θ_t ← ω θ_t + (1 − ω) θ_s`.
pub fn ema_update(teacher: &mut [f64], student: &[f64], decay: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::shape(format!("teacher has {} parameters, student {}", teacher.len(), student.len())));
    }
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = decay * *t + (1.0 - decay) * s;
    }
    Ok(())
}
