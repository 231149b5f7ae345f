#![allow(dead_code)]

use dsnerv::decoder::{FusionDecoderSpec, ModelSpec, ParameterStore};
use dsnerv::training::l2_loss_with_grad;
use dsnerv::{Model, TimelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32×64 desk-scale decoder with four ×2 upsampling stages.
pub fn desk_spec(frames: usize, static_codes: usize, dynamic_codes: usize, c1: usize) -> ModelSpec {
    ModelSpec {
        timeline: TimelineConfig::new(frames, static_codes, dynamic_codes).unwrap(),
        decoder: FusionDecoderSpec {
            c1,
            ch_min: 8,
            strides: vec![2, 2, 2, 2],
            channel_reduction: 1.2,
            head_kernel: 1,
            kernel_min: 1,
            kernel_max: 5,
            dynamic_kernel: 3,
            static_shape: (2, 4, 16),
            dynamic_shape: (4, 8, 2),
            output: (32, 64),
        },
    }
}

/// 16×32 model small enough for finite differences.
pub fn toy_spec() -> ModelSpec {
    ModelSpec {
        timeline: TimelineConfig::new(6, 3, 4).unwrap(),
        decoder: FusionDecoderSpec {
            c1: 8,
            ch_min: 4,
            strides: vec![2, 2, 2],
            channel_reduction: 1.2,
            head_kernel: 1,
            kernel_min: 1,
            kernel_max: 5,
            dynamic_kernel: 3,
            static_shape: (2, 4, 8),
            dynamic_shape: (4, 8, 2),
            output: (16, 32),
        },
    }
}

pub fn random_targets(spec: &ModelSpec, times: &[f64], seed: u64) -> Vec<(f64, Vec<f64>)> {
    let (h, w) = spec.decoder.output;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    times
        .iter()
        .map(|&t| (t, (0..h * w * 3).map(|_| rng.gen::<f64>()).collect()))
        .collect()
}

pub fn total_loss(model: &Model<f64>, targets: &[(f64, Vec<f64>)]) -> f64 {
    targets
        .iter()
        .map(|(t, target)| {
            let frame = model.decode(*t).unwrap();
            l2_loss_with_grad(frame.data(), target, None).unwrap().0
        })
        .sum()
}

pub fn analytic_grads(model: &Model<f64>, targets: &[(f64, Vec<f64>)]) -> ParameterStore<f64> {
    let mut grads = model.params.zeros_like();
    for (t, target) in targets {
        let (frame, tape) = model.forward(*t).unwrap();
        let (_, d) = l2_loss_with_grad(frame.data(), target, None).unwrap();
        model.backward(&tape, &d, &mut grads);
    }
    grads
}

/// Central difference of the loss in parameter `(tensor, index)`.
pub fn numeric_grad(
    model: &mut Model<f64>,
    tensor: usize,
    index: usize,
    targets: &[(f64, Vec<f64>)],
    h: f64,
) -> f64 {
    let original = model.params.tensors()[tensor].tensor.data()[index];
    let set =
        |m: &mut Model<f64>, v: f64| m.params.tensors_mut()[tensor].tensor.data_mut()[index] = v;
    set(model, original + h);
    let up = total_loss(model, targets);
    set(model, original - h);
    let down = total_loss(model, targets);
    set(model, original);
    (up - down) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// The 0.35M-parameter configuration for 640×1280 content.
pub fn bunny_spec() -> ModelSpec {
    ModelSpec {
        timeline: TimelineConfig::new(132, 13, 66).unwrap(),
        decoder: FusionDecoderSpec {
            c1: 36,
            ch_min: 16,
            strides: vec![5, 2, 2, 2, 2, 2],
            channel_reduction: 1.2,
            head_kernel: 1,
            kernel_min: 1,
            kernel_max: 5,
            dynamic_kernel: 3,
            static_shape: (4, 8, 64),
            dynamic_shape: (20, 40, 1),
            output: (640, 1280),
        },
    }
}
