use std::f64::consts::PI;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::param::ParamGroup;

/// Learning rate at `step`: a linear ramp from 0 to the group's peak over
/// `warmup_iters`, then cosine decay to 0 at `total_iters`. The decoder
/// group's peak is the encoder peak times `lr_decoder_multiplier`.
pub fn lr_at(step: usize, cfg: &TrainConfig, group: ParamGroup) -> Result<f64> {
    if step > cfg.total_iters {
        return Err(Error::Contract(format!(
            "step {step} beyond total_iters {}",
            cfg.total_iters
        )));
    }
    let peak = match group {
        ParamGroup::Encoder => cfg.peak_lr_encoder,
        ParamGroup::Decoder => cfg.peak_lr_encoder * cfg.lr_decoder_multiplier,
    };
    let warmup = cfg.warmup_iters;
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let span = cfg.total_iters - warmup;
    if span == 0 {
        return Ok(peak);
    }
    let progress = (step - warmup) as f64 / span as f64;
    Ok((peak * 0.5 * (1.0 + (PI * progress).cos())).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            peak_lr_encoder: 1e-5,
            warmup_iters: 500,
            total_iters: 1500,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let c = cfg();
        assert_eq!(lr_at(500, &c, ParamGroup::Encoder).unwrap(), 1e-5);
        assert_eq!(lr_at(1500, &c, ParamGroup::Encoder).unwrap(), 0.0);
        let mid = lr_at(1000, &c, ParamGroup::Encoder).unwrap();
        assert!((mid - 5e-6).abs() < 1e-18, "{mid}");
        assert!((lr_at(500, &c, ParamGroup::Decoder).unwrap() - 5e-5).abs() < 1e-18);
        assert_eq!(lr_at(0, &c, ParamGroup::Decoder).unwrap(), 0.0);
        assert!(matches!(lr_at(1501, &c, ParamGroup::Encoder), Err(Error::Contract(_))));
    }

    #[test]
    fn continuous_at_warmup_and_non_negative() {
        let c = cfg();
        let before = lr_at(499, &c, ParamGroup::Encoder).unwrap();
        let at = lr_at(500, &c, ParamGroup::Encoder).unwrap();
        let after = lr_at(501, &c, ParamGroup::Encoder).unwrap();
        assert!((at - before).abs() <= 1e-5 / 500.0 + 1e-18);
        assert!((at - after).abs() < 1e-9);
        for s in 0..=1500 {
            assert!(lr_at(s, &c, ParamGroup::Decoder).unwrap() >= 0.0);
        }
    }
}
