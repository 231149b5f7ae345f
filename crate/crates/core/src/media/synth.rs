use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FrameSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Smooth fixed background with a solid square moving at constant velocity.
    StaticPlusMovingSquare,
    /// A window sliding across a smooth texture.
    TexturedPan,
    /// A noise-textured disc jumping along a fast Lissajous path.
    HighMotionNoiseBall,
}

/// Optional overrides; unset fields take defaults derived from the frame size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    /// Pixels per frame as `(down, right)`. Square and pan only.
    pub velocity: Option<(f64, f64)>,
    /// Square side or ball radius in pixels.
    pub object_size: Option<usize>,
    /// Top-left corner of the square in frame 0.
    pub start: Option<(f64, f64)>,
}

struct Wave {
    amp: f64,
    fy: f64,
    fx: f64,
    phase: f64,
}

/// Low-frequency per-channel colour field.
struct Field {
    base: [f64; 3],
    waves: [Vec<Wave>; 3],
}

impl Field {
    fn new(rng: &mut ChaCha8Rng, count: usize, max_freq: f64, amp: f64) -> Self {
        let mut waves: [Vec<Wave>; 3] = Default::default();
        let mut base = [0.0; 3];
        for c in 0..3 {
            base[c] = rng.gen_range(0.35..0.65);
            for k in 0..count {
                let a = amp / (1.0 + k as f64);
                waves[c].push(Wave {
                    amp: a,
                    fy: rng.gen_range(-max_freq..max_freq),
                    fx: rng.gen_range(-max_freq..max_freq),
                    phase: rng.gen_range(0.0..TAU),
                });
            }
        }
        Self { base, waves }
    }

    /// `u`, `v` in units of the frame height and width.
    fn at(&self, u: f64, v: f64, c: usize) -> f32 {
        let s: f64 = self.waves[c]
            .iter()
            .map(|w| w.amp * (TAU * (w.fy * u + w.fx * v) + w.phase).sin())
            .sum();
        (self.base[c] + s).clamp(0.0, 1.0) as f32
    }
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let field = Field::new(rng, 2, 0.8, 0.15);
    let mut img = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                img[(y * w + x) * 3 + c] = field.at(y as f64 / h as f64, x as f64 / w as f64, c);
            }
        }
    }
    img
}

fn contrasting_colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let mut colour = [0f32; 3];
    for v in &mut colour {
        *v = if rng.gen_bool(0.5) { 0.92 } else { 0.08 };
    }
    colour
}

pub fn synth_video(
    kind: SynthKind,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<FrameSequence> {
    synth_video_with(kind, SynthOptions::default(), frames, height, width, seed)
}

pub fn synth_video_with(
    kind: SynthKind,
    options: SynthOptions,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<FrameSequence> {
    if frames < 2 || height < 4 || width < 4 {
        return Err(Error::InvalidConfig(format!(
            "synthetic video needs at least 2 frames of 4x4, got {frames} of {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = height * width * 3;
    let mut data = vec![0f32; frames * px];
    match kind {
        SynthKind::StaticPlusMovingSquare => {
            let bg = background(&mut rng, height, width);
            let colour = contrasting_colour(&mut rng);
            let size = options
                .object_size
                .unwrap_or((height.min(width) / 5).max(2));
            let (y0, x0) = options.start.unwrap_or(((height / 8) as f64, 1.0));
            let span = width.saturating_sub(size + 2) as f64;
            let velocity = options
                .velocity
                .unwrap_or((0.0, span / (frames - 1) as f64));
            for t in 0..frames {
                let frame = &mut data[t * px..(t + 1) * px];
                frame.copy_from_slice(&bg);
                let top = (y0 + velocity.0 * t as f64).round() as isize;
                let left = (x0 + velocity.1 * t as f64).round() as isize;
                for y in top.max(0)..(top + size as isize).min(height as isize) {
                    for x in left.max(0)..(left + size as isize).min(width as isize) {
                        let p = (y as usize * width + x as usize) * 3;
                        frame[p..p + 3].copy_from_slice(&colour);
                    }
                }
            }
        }
        SynthKind::TexturedPan => {
            let field = Field::new(&mut rng, 5, 2.5, 0.22);
            let velocity = options.velocity.unwrap_or((0.0, 1.0));
            for t in 0..frames {
                let frame = &mut data[t * px..(t + 1) * px];
                let (dy, dx) = (velocity.0 * t as f64, velocity.1 * t as f64);
                for y in 0..height {
                    for x in 0..width {
                        let u = (y as f64 + dy) / height as f64;
                        let v = (x as f64 + dx) / width as f64;
                        for c in 0..3 {
                            frame[(y * width + x) * 3 + c] = field.at(u, v, c);
                        }
                    }
                }
            }
        }
        SynthKind::HighMotionNoiseBall => {
            let bg = background(&mut rng, height, width);
            let radius = options
                .object_size
                .unwrap_or((height.min(width) / 5).max(2));
            let side = 2 * radius + 1;
            let texture: Vec<f32> = (0..side * side * 3).map(|_| rng.gen::<f32>()).collect();
            let (phase_y, phase_x) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let amp_y = (height as f64 / 2.0 - radius as f64).max(0.0);
            let amp_x = (width as f64 / 2.0 - radius as f64).max(0.0);
            let r2 = (radius * radius) as isize;
            for t in 0..frames {
                let frame = &mut data[t * px..(t + 1) * px];
                frame.copy_from_slice(&bg);
                let cy = (height as f64 / 2.0 + amp_y * (TAU * 0.29 * t as f64 + phase_y).sin())
                    .round() as isize;
                let cx = (width as f64 / 2.0 + amp_x * (TAU * 0.37 * t as f64 + phase_x).sin())
                    .round() as isize;
                let r = radius as isize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (cy + dy, cx + dx);
                        if dy * dy + dx * dx > r2
                            || y < 0
                            || x < 0
                            || y >= height as isize
                            || x >= width as isize
                        {
                            continue;
                        }
                        let p = (y as usize * width + x as usize) * 3;
                        let q = ((dy + r) as usize * side + (dx + r) as usize) * 3;
                        frame[p..p + 3].copy_from_slice(&texture[q..q + 3]);
                    }
                }
            }
        }
    }
    FrameSequence::new(Tensor::from_vec(&[frames, height, width, 3], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for kind in [
            SynthKind::StaticPlusMovingSquare,
            SynthKind::TexturedPan,
            SynthKind::HighMotionNoiseBall,
        ] {
            let a = synth_video(kind, 6, 16, 24, 3).unwrap();
            let b = synth_video(kind, 6, 16, 24, 3).unwrap();
            let c = synth_video(kind, 6, 16, 24, 4).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert_ne!(a.frame(0), a.frame(1), "{kind:?} should move");
        }
    }

    #[test]
    fn still_square_gives_identical_frames() {
        let options = SynthOptions {
            velocity: Some((0.0, 0.0)),
            ..Default::default()
        };
        let v = synth_video_with(SynthKind::StaticPlusMovingSquare, options, 5, 16, 16, 1).unwrap();
        for t in 1..5 {
            assert_eq!(v.frame(0), v.frame(t));
        }
    }

    fn leftmost_changed_column(v: &FrameSequence, bg: &[f32], t: usize) -> usize {
        let w = v.width();
        let f = v.frame(t);
        (0..w)
            .find(|&x| {
                (0..v.height())
                    .any(|y| (0..3).any(|c| f[(y * w + x) * 3 + c] != bg[(y * w + x) * 3 + c]))
            })
            .unwrap()
    }

    #[test]
    fn square_moves_at_configured_velocity() {
        let still = SynthOptions {
            velocity: Some((0.0, 0.0)),
            start: Some((4.0, -10.0)),
            ..Default::default()
        };
        let bg = synth_video_with(SynthKind::StaticPlusMovingSquare, still, 2, 24, 48, 8).unwrap();
        let options = SynthOptions {
            velocity: Some((0.0, 3.0)),
            start: Some((4.0, 2.0)),
            ..Default::default()
        };
        let v = synth_video_with(SynthKind::StaticPlusMovingSquare, options, 8, 24, 48, 8).unwrap();
        let track: Vec<usize> = (0..8)
            .map(|t| leftmost_changed_column(&v, bg.frame(0), t))
            .collect();
        for pair in track.windows(2) {
            assert_eq!(pair[1] - pair[0], 3);
        }
        // Everything off the square's path is the shared background.
        let (w, size) = (48, 24 / 5);
        for t in 0..8 {
            for y in (0..24).filter(|y| !(4..4 + size).contains(y)) {
                let row = &v.frame(t)[y * w * 3..(y + 1) * w * 3];
                assert_eq!(row, &bg.frame(0)[y * w * 3..(y + 1) * w * 3]);
            }
        }
    }
}
