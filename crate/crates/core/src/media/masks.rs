use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FrameSequence;
use crate::error::{Error, Result};

/// Where pixels are hidden.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    /// One centred box of a quarter of the frame width and height.
    Central,
    /// `boxes` non-overlapping squares of side `size`, placed from the seed.
    Disperse {
        #[serde(default = "default_boxes")]
        boxes: usize,
        #[serde(default = "default_box_size")]
        size: usize,
    },
}

fn default_boxes() -> usize {
    5
}

fn default_box_size() -> usize {
    50
}

impl MaskSpec {
    pub fn disperse() -> Self {
        Self::Disperse {
            boxes: default_boxes(),
            size: default_box_size(),
        }
    }
}

/// A hidden rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl MaskBox {
    fn overlaps(&self, other: &MaskBox) -> bool {
        self.left < other.left + other.width
            && other.left < self.left + self.width
            && self.top < other.top + other.height
            && other.top < self.top + self.height
    }
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn mask_boxes(spec: MaskSpec, height: usize, width: usize, seed: u64) -> Result<Vec<MaskBox>> {
    match spec {
        MaskSpec::Central => {
            let (bh, bw) = (height / 4, width / 4);
            if bh == 0 || bw == 0 {
                return Err(Error::MaskTooLarge(format!(
                    "a {height}x{width} frame is too small for a quarter-size central box"
                )));
            }
            Ok(vec![MaskBox {
                top: (height - bh) / 2,
                left: (width - bw) / 2,
                height: bh,
                width: bw,
            }])
        }
        MaskSpec::Disperse { boxes, size } => {
            if size == 0 || size > height || size > width {
                return Err(Error::MaskTooLarge(format!(
                    "{size}x{size} boxes in a {height}x{width} frame"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut placed: Vec<MaskBox> = Vec::with_capacity(boxes);
            let mut attempts = 0;
            while placed.len() < boxes {
                attempts += 1;
                if attempts > PLACEMENT_ATTEMPTS {
                    return Err(Error::MaskTooLarge(format!(
                        "could not place {boxes} disjoint {size}x{size} boxes in a {height}x{width} frame"
                    )));
                }
                let candidate = MaskBox {
                    top: rng.gen_range(0..=height - size),
                    left: rng.gen_range(0..=width - size),
                    height: size,
                    width: size,
                };
                if placed.iter().all(|b| !b.overlaps(&candidate)) {
                    placed.push(candidate);
                }
            }
            Ok(placed)
        }
    }
}

/// `[H, W]` visibility map: `0` inside boxes, `1` elsewhere.
pub fn build_mask(spec: MaskSpec, height: usize, width: usize, seed: u64) -> Result<Vec<u8>> {
    let mut mask = vec![1u8; height * width];
    for b in mask_boxes(spec, height, width, seed)? {
        for y in b.top..b.top + b.height {
            mask[y * width + b.left..y * width + b.left + b.width].fill(0);
        }
    }
    Ok(mask)
}

/// Hides the same boxes in every frame. The unmasked frames stay available
/// through [`FrameSequence::clean_frame`].
pub fn apply_mask(seq: &FrameSequence, spec: MaskSpec, seed: u64) -> Result<FrameSequence> {
    let (h, w) = seq.resolution();
    let mask = build_mask(spec, h, w, seed)?;
    let mut frames = seq.frames.clone();
    let mut masks = Vec::with_capacity(seq.len() * h * w);
    for t in 0..seq.len() {
        let frame = frames.slice_mut(t);
        for (p, &m) in mask.iter().enumerate() {
            if m == 0 {
                frame[p * 3..p * 3 + 3].fill(0.0);
            }
        }
        masks.extend_from_slice(&mask);
    }
    Ok(FrameSequence {
        frames,
        source: seq.source.clone(),
        masks: Some(masks),
        clean: Some(seq.clean.clone().unwrap_or_else(|| seq.frames.clone())),
    })
}
