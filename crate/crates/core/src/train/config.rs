use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr_encoder: f64,
    pub lr_decoder_multiplier: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Loss-trace sampling interval in steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr_encoder: 1e-5,
            lr_decoder_multiplier: 5.0,
            warmup_iters: 500,
            total_iters: 10_000,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            label_smoothing: 0.1,
            grad_clip: Some(1.0),
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.warmup_iters > self.total_iters {
            return bad(format!(
                "warmup_iters {} exceeds total_iters {}",
                self.warmup_iters, self.total_iters
            ));
        }
        if self.total_iters == 0 || self.batch_size == 0 || self.log_every == 0 {
            return bad("total_iters, batch_size and log_every must be positive".into());
        }
        if !(self.peak_lr_encoder >= 0.0 && self.peak_lr_encoder.is_finite()) {
            return bad(format!("peak_lr_encoder {} is not a valid rate", self.peak_lr_encoder));
        }
        if !(self.lr_decoder_multiplier >= 0.0 && self.lr_decoder_multiplier.is_finite()) {
            return bad(format!("lr_decoder_multiplier {} is invalid", self.lr_decoder_multiplier));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay {} is negative", self.weight_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }
}
