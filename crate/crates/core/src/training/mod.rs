//! Joint optimisation of codes and decoder.

mod adan;
mod loss;
mod schedule;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adan::{adan_update, optimizer_step, AdanConfig, AdanSlot, AdanState};
pub use loss::{l2_loss, l2_loss_with_grad};
pub use schedule::{lr_schedule, StepRates};

use crate::decoder::{Model, ParameterStore};
use crate::error::{Error, Result};
use crate::media::{apply_mask, FrameSequence, MaskSpec};
use crate::metrics::{mean, psnr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub code_lr_multiplier: f64,
    pub betas: (f64, f64, f64),
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            base_lr: 7e-3,
            code_lr_multiplier: 10.0,
            betas: (0.98, 0.92, 0.99),
            weight_decay: 0.02,
            warmup_ratio: 0.2,
            batch_size: 1,
            seed: 0,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad(format!(
                "warmup_ratio must lie in (0, 1), got {}",
                self.warmup_ratio
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let (b1, b2, b3) = self.betas;
        if ![b1, b2, b3].iter().all(|b| (0.0..1.0).contains(b)) {
            return bad(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return bad("weight_decay must be non-negative and eps positive".into());
        }
        Ok(())
    }

    pub fn adan(&self) -> AdanConfig {
        AdanConfig {
            betas: self.betas,
            weight_decay: self.weight_decay,
            eps: self.eps,
        }
    }

    pub fn steps_per_epoch(&self, train_frames: usize) -> usize {
        train_frames.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reconstruction,
    Interpolation,
    Inpainting,
}

/// Which frames are fitted, which are scored, and what is hidden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
    pub mask: Option<MaskSpec>,
}

impl TaskSpec {
    pub fn reconstruction(frames: usize) -> Self {
        Self {
            kind: TaskKind::Reconstruction,
            train_indices: (0..frames).collect(),
            eval_indices: (0..frames).collect(),
            mask: None,
        }
    }

    /// Fits even frames and scores the odd ones.
    pub fn interpolation(frames: usize) -> Self {
        Self {
            kind: TaskKind::Interpolation,
            train_indices: (0..frames).step_by(2).collect(),
            eval_indices: (1..frames).step_by(2).collect(),
            mask: None,
        }
    }

    /// Fits visible pixels of every frame and scores whole frames.
    pub fn inpainting(frames: usize, mask: MaskSpec) -> Self {
        Self {
            kind: TaskKind::Inpainting,
            train_indices: (0..frames).collect(),
            eval_indices: (0..frames).collect(),
            mask: Some(mask),
        }
    }

    pub fn for_kind(kind: TaskKind, frames: usize, mask: Option<MaskSpec>) -> Result<Self> {
        match kind {
            TaskKind::Reconstruction => Ok(Self::reconstruction(frames)),
            TaskKind::Interpolation => Ok(Self::interpolation(frames)),
            TaskKind::Inpainting => mask
                .map(|m| Self::inpainting(frames, m))
                .ok_or_else(|| Error::InvalidConfig("inpainting needs a mask".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_psnr: f64,
    pub eval_psnr: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Eval PSNR of the model before the first update.
    pub initial_eval_psnr: f64,
    pub epochs: Vec<EpochRecord>,
    /// Batch loss of every optimisation step.
    pub step_losses: Vec<f64>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,train_psnr,eval_psnr,lr,seconds";

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            writeln!(
                out,
                "{},{:.8},{:.6},{:.6},{:.8e},{:.4}",
                r.epoch, r.loss, r.train_psnr, r.eval_psnr, r.lr, r.seconds
            )
            .unwrap();
        }
        out
    }
}

/// Mean per-frame PSNR of `model` over `indices`, scored against unmasked frames.
pub fn evaluate_psnr(model: &Model<f32>, data: &FrameSequence, indices: &[usize]) -> Result<f64> {
    let scores: Vec<f64> = indices
        .par_iter()
        .map(|&t| {
            let frame = model.decode(t as f64)?;
            psnr(frame.data(), data.clean_frame(t))
        })
        .collect::<Result<_>>()?;
    Ok(mean(&scores))
}

fn check_compatible(data: &FrameSequence, model: &Model<f32>, task: &TaskSpec) -> Result<()> {
    let (h, w) = model.spec.decoder.output;
    if data.resolution() != (h, w) {
        return Err(Error::ConfigMismatch(format!(
            "video is {}x{}, model decodes {h}x{w}",
            data.height(),
            data.width()
        )));
    }
    if data.len() != model.frames() {
        return Err(Error::ConfigMismatch(format!(
            "video has {} frames, model timeline has {}",
            data.len(),
            model.frames()
        )));
    }
    if task.train_indices.is_empty() || task.eval_indices.is_empty() {
        return Err(Error::ConfigMismatch(
            "task has no train or eval frames".into(),
        ));
    }
    if let Some(&t) = task
        .train_indices
        .iter()
        .chain(&task.eval_indices)
        .find(|&&t| t >= data.len())
    {
        return Err(Error::ConfigMismatch(format!(
            "frame index {t} outside a {}-frame video",
            data.len()
        )));
    }
    Ok(())
}

struct FrameGrad {
    loss: f64,
    psnr: f64,
    grads: ParameterStore<f32>,
}

fn frame_step(
    model: &Model<f32>,
    data: &FrameSequence,
    t: usize,
    masked: bool,
) -> Result<FrameGrad> {
    let (frame, tape) = model.forward(t as f64)?;
    let mask = if masked { data.mask(t) } else { None };
    let (loss, d_frame) = l2_loss_with_grad(frame.data(), data.frame(t), mask)?;
    let mut grads = model.params.zeros_like();
    model.backward(&tape, &d_frame, &mut grads);
    Ok(FrameGrad {
        loss: loss as f64,
        psnr: psnr(frame.data(), data.clean_frame(t))?,
        grads,
    })
}

/// Trains `model` in place of a copy and returns it with the log.
pub fn train(
    data: &FrameSequence,
    model: Model<f32>,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<(Model<f32>, TrainLog)> {
    train_with(data, model, task, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    data: &FrameSequence,
    mut model: Model<f32>,
    task: &TaskSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainLog)> {
    config.validate()?;
    check_compatible(data, &model, task)?;
    let masked_data;
    let data = match (task.mask, data.is_masked()) {
        (Some(spec), false) => {
            masked_data = apply_mask(data, spec, config.seed)?;
            &masked_data
        }
        _ => data,
    };
    let masked = task.mask.is_some();

    let adan = config.adan();
    let steps_per_epoch = config.steps_per_epoch(task.train_indices.len());
    let total_steps = steps_per_epoch * config.epochs;
    let mut state = AdanState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = task.train_indices.clone();
    let mut log = TrainLog {
        initial_eval_psnr: evaluate_psnr(&model, data, &task.eval_indices)?,
        ..Default::default()
    };
    let started = Instant::now();
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        let mut psnrs = Vec::with_capacity(order.len());
        let mut last_lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<FrameGrad> = batch
                .par_iter()
                .map(|&t| frame_step(&model, data, t, masked))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f32;
            let mut grads = model.params.zeros_like();
            let mut batch_loss = 0.0;
            for r in &results {
                grads.axpy(scale, &r.grads);
                batch_loss += r.loss;
                losses.push(r.loss);
                psnrs.push(r.psnr);
            }
            let rates = lr_schedule(step, total_steps, config);
            optimizer_step(&mut model.params, &grads, &mut state, rates, &adan)?;
            log.step_losses.push(batch_loss / batch.len() as f64);
            last_lr = rates.decoder;
            step += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: mean(&losses),
            train_psnr: mean(&psnrs),
            eval_psnr: evaluate_psnr(&model, data, &task.eval_indices)?,
            lr: last_lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((model, log))
}
