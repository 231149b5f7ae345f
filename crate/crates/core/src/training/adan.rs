//! Adaptive Nesterov momentum (Adan).

use serde::{Deserialize, Serialize};

use super::schedule::StepRates;
use crate::decoder::{ParamGroup, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdanConfig {
    pub betas: (f64, f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdanConfig {
    fn default() -> Self {
        Self {
            betas: (0.98, 0.92, 0.99),
            weight_decay: 0.02,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdanSlot<T> {
    pub mean: Vec<T>,
    pub diff: Vec<T>,
    pub sq: Vec<T>,
    pub prev_grad: Vec<T>,
}

impl<T: Real> AdanSlot<T> {
    fn ensure(&mut self, len: usize) {
        if self.mean.len() != len {
            self.mean = vec![T::zero(); len];
            self.diff = vec![T::zero(); len];
            self.sq = vec![T::zero(); len];
            self.prev_grad = Vec::new();
        }
    }
}

/// Optimizer state, created empty and filled on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdanState<T> {
    pub step: u64,
    pub slots: Vec<AdanSlot<T>>,
}

impl<T: Real> AdanState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            slots: Vec::new(),
        }
    }
}

/// One Adan update of a flat tensor. `step` is 1-based.
///
/// The first step takes the gradient difference as zero. Weight decay is applied
/// in proximal form, dividing by `1 + lr·wd` after the gradient step.
pub fn adan_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    slot: &mut AdanSlot<T>,
    lr: f64,
    config: &AdanConfig,
    step: u64,
) {
    slot.ensure(param.len());
    if slot.prev_grad.is_empty() {
        slot.prev_grad = grad.to_vec();
    }
    let (b1, b2, b3) = config.betas;
    let step = step as i32;
    let bc1 = 1.0 - b1.powi(step);
    let bc2 = 1.0 - b2.powi(step);
    let bc3_sqrt = (1.0 - b3.powi(step)).sqrt();
    let (b1t, b2t, b3t) = (T::lit(b1), T::lit(b2), T::lit(b3));
    let (one_b1, one_b2, one_b3) = (T::lit(1.0 - b1), T::lit(1.0 - b2), T::lit(1.0 - b3));
    let lr_t = T::lit(lr);
    let decay = T::one() + T::lit(lr * config.weight_decay);
    let eps = T::lit(config.eps);
    let (inv_bc1, inv_bc2, inv_bc3) =
        (T::lit(1.0 / bc1), T::lit(1.0 / bc2), T::lit(1.0 / bc3_sqrt));

    for i in 0..param.len() {
        let g = grad[i];
        let d = g - slot.prev_grad[i];
        slot.mean[i] = b1t * slot.mean[i] + one_b1 * g;
        slot.diff[i] = b2t * slot.diff[i] + one_b2 * d;
        let nesterov = g + b2t * d;
        slot.sq[i] = b3t * slot.sq[i] + one_b3 * nesterov * nesterov;
        let denom = slot.sq[i].sqrt() * inv_bc3 + eps;
        let update = (slot.mean[i] * inv_bc1 + b2t * slot.diff[i] * inv_bc2) / denom;
        param[i] = (param[i] - lr_t * update) / decay;
        slot.prev_grad[i] = g;
    }
}

/// Applies one update to every tensor, codes at `rates.code` and decoder layers at `rates.decoder`.
pub fn optimizer_step<T: Real>(
    params: &mut ParameterStore<T>,
    grads: &ParameterStore<T>,
    state: &mut AdanState<T>,
    rates: StepRates,
    config: &AdanConfig,
) -> Result<()> {
    let grad_refs = grads.tensors();
    if let Some(bad) = grad_refs.iter().find(|g| !g.tensor.is_finite()) {
        return Err(Error::NonFiniteGradient(bad.name.clone()));
    }
    let mut targets = params.tensors_mut();
    if targets.len() != grad_refs.len() {
        return Err(Error::ShapeMismatch(
            "gradient store layout differs from parameters".into(),
        ));
    }
    state.step += 1;
    state.slots.resize_with(targets.len(), AdanSlot::default);
    for ((target, grad), slot) in targets
        .iter_mut()
        .zip(&grad_refs)
        .zip(state.slots.iter_mut())
    {
        if target.tensor.shape() != grad.tensor.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for `{}` has the wrong shape",
                target.name
            )));
        }
        let lr = match target.group {
            ParamGroup::Code => rates.code,
            ParamGroup::Decoder => rates.decoder,
        };
        adan_update(
            target.tensor.data_mut(),
            grad.tensor.data(),
            slot,
            lr,
            config,
            state.step,
        );
    }
    Ok(())
}
