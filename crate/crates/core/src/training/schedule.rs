//! Linear warmup followed by cosine annealing.

use std::f64::consts::PI;

use super::TrainConfig;

/// Learning rates for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRates {
    pub decoder: f64,
    pub code: f64,
}

/// Decoder rate ramps linearly from 0 over `warmup_ratio · total_steps` steps, then
/// follows a half cosine that reaches 0 on the last step. Codes always run at
/// `code_lr_multiplier` times the decoder rate.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> StepRates {
    let decoder = decoder_rate(step, total_steps, config.base_lr, config.warmup_ratio);
    StepRates {
        decoder,
        code: decoder * config.code_lr_multiplier,
    }
}

fn decoder_rate(step: usize, total_steps: usize, base: f64, warmup_ratio: f64) -> f64 {
    let step = step as f64;
    let warmup = warmup_ratio * total_steps as f64;
    if step < warmup {
        return base * step / warmup;
    }
    let span = (total_steps as f64 - 1.0) - warmup;
    if span <= 0.0 {
        return base;
    }
    let progress = ((step - warmup) / span).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}
