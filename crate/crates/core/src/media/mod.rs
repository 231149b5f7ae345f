//! Frames in and out: image sequences, masks, synthetic clips and checkpoints.

mod checkpoint;
mod files;
mod masks;
mod synth;

use std::path::{Path, PathBuf};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use files::{load_frames, save_frames, save_indexed_frames, FRAME_EXTENSIONS};
pub use masks::{apply_mask, build_mask, mask_boxes, MaskBox, MaskSpec};
pub use synth::{synth_video, synth_video_with, SynthKind, SynthOptions};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `T` RGB frames of `H × W` in `[0, 1]`, stored `[T, H, W, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Tensor<f32>,
    source: Option<PathBuf>,
    masks: Option<Vec<u8>>,
    clean: Option<Tensor<f32>>,
}

impl FrameSequence {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        let shape = frames.shape();
        if shape.len() != 4 || shape[3] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "frames must be [T, H, W, 3], got {shape:?}"
            )));
        }
        if shape[0] < 2 {
            return Err(Error::InvalidConfig(format!(
                "a video needs at least 2 frames, got {}",
                shape[0]
            )));
        }
        if shape[1] == 0 || shape[2] == 0 {
            return Err(Error::ShapeMismatch("frames have zero area".into()));
        }
        if !frames
            .data()
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
        {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            frames,
            source: None,
            masks: None,
            clean: None,
        })
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source = Some(path.into());
        self
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.frames
    }

    /// Frame `t` as seen by training (masked pixels zeroed if a mask was applied).
    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames.slice(t)
    }

    /// Frame `t` before any mask was applied.
    pub fn clean_frame(&self, t: usize) -> &[f32] {
        self.clean.as_ref().unwrap_or(&self.frames).slice(t)
    }

    /// Visibility of frame `t` as `[H, W]`, `1` visible and `0` hidden.
    pub fn mask(&self, t: usize) -> Option<&[u8]> {
        let px = self.height() * self.width();
        self.masks.as_ref().map(|m| &m[t * px..(t + 1) * px])
    }

    pub fn is_masked(&self) -> bool {
        self.masks.is_some()
    }
}
