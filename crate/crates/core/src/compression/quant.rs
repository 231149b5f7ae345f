use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;

/// Per-tensor affine map `value = min + code · scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub min: f32,
    pub scale: f32,
    pub bits: u8,
}

impl QuantSpec {
    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn value(&self, code: u32) -> f64 {
        self.min as f64 + code as f64 * self.scale as f64
    }
}

fn scale_for(min: f32, max: f32, levels: u32) -> f32 {
    ((max as f64 - min as f64) / levels as f64) as f32
}

const SCALE_SEARCH_ULPS: usize = 64;

/// Picks an f32 scale close to `(max − min) / levels` whose top level, once
/// rounded to f32, yields the same scale again. Requantising dequantised
/// values then reproduces the same parameters.
fn stable_scale(min: f32, max: f32, levels: u32) -> f32 {
    let first = scale_for(min, max, levels);
    let settles = |s: f32| {
        let top = (min as f64 + levels as f64 * s as f64) as f32;
        s > 0.0
            && s.is_finite()
            && scale_for(min, top, levels) == s
            && top as f64 + s as f64 / 2.0 >= max as f64
    };
    let (mut up, mut down) = (first, first);
    for _ in 0..SCALE_SEARCH_ULPS {
        if settles(up) {
            return up;
        }
        if settles(down) {
            return down;
        }
        up = next_up(up);
        down = next_down(down);
    }
    first
}

fn next_up(x: f32) -> f32 {
    f32::from_bits(x.to_bits() + 1)
}

fn next_down(x: f32) -> f32 {
    f32::from_bits(x.to_bits() - 1)
}

/// Min–max affine quantisation to `bits`-bit codes.
pub fn quantize(values: &[f32], bits: u8) -> Result<(Vec<u32>, QuantSpec)> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidConfig(format!(
            "bit depth must be {MIN_BITS}..={MAX_BITS}, got {bits}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let levels = (1u32 << bits) - 1;
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if values.is_empty() || min == max {
        let min = if values.is_empty() { 0.0 } else { min };
        return Ok((
            vec![0; values.len()],
            QuantSpec {
                min,
                scale: 1.0,
                bits,
            },
        ));
    }
    let scale = stable_scale(min, max, levels);
    let spec = QuantSpec { min, scale, bits };
    let (lo, s) = (min as f64, scale as f64);
    let codes = values
        .iter()
        .map(|&v| ((v as f64 - lo) / s).round().clamp(0.0, levels as f64) as u32)
        .collect();
    Ok((codes, spec))
}

pub fn dequantize<T: Real>(codes: &[u32], spec: &QuantSpec) -> Vec<T> {
    codes.iter().map(|&c| T::lit(spec.value(c))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_tensor() {
        let (codes, spec) = quantize(&[0.7; 10], 8).unwrap();
        assert!(codes.iter().all(|&c| c == 0));
        assert_eq!(spec.scale, 1.0);
        assert!(dequantize::<f32>(&codes, &spec).iter().all(|&v| v == 0.7));
    }

    #[test]
    fn linspace_is_exact() {
        let x: Vec<f32> = (0..256).map(|i| (i as f64 / 255.0) as f32).collect();
        let (codes, spec) = quantize(&x, 8).unwrap();
        assert_eq!(codes, (0..256).collect::<Vec<_>>());
        // The stored scale is the f32 nearest 1/255, so values agree to f32 rounding.
        for (d, v) in dequantize::<f32>(&codes, &spec).iter().zip(&x) {
            assert!((d - v).abs() <= 2.0 * f32::EPSILON * v.abs(), "{d} vs {v}");
        }
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            quantize(&[1.0, f32::NAN], 8),
            Err(Error::NonFiniteInput)
        ));
        assert!(matches!(quantize(&[1.0], 1), Err(Error::InvalidConfig(_))));
        assert!(matches!(quantize(&[1.0], 17), Err(Error::InvalidConfig(_))));
    }
}
