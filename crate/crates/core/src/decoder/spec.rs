use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{CodeShape, TimelineConfig};

/// One convolution → pixel-shuffle → GELU stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NervBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub upscale: usize,
    pub kernel_size: usize,
}

impl NervBlockSpec {
    /// Convolution output channels before the pixel shuffle.
    pub fn conv_channels(&self) -> usize {
        self.out_channels * self.upscale * self.upscale
    }

    pub fn param_count(&self) -> usize {
        let conv_out = self.conv_channels();
        conv_out * self.in_channels * self.kernel_size * self.kernel_size + conv_out
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec("block channels must be positive".into()));
        }
        if self.upscale == 0 {
            return Err(Error::InvalidSpec(
                "block upscale must be at least 1".into(),
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "kernel size {} is not odd",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

fn default_reduction() -> f64 {
    1.2
}
fn default_head_kernel() -> usize {
    1
}
fn default_kernel_min() -> usize {
    1
}
fn default_kernel_max() -> usize {
    5
}
fn default_dynamic_kernel() -> usize {
    3
}

/// Layout of the fusion decoder.
///
/// Block 0 aligns the static code to the dynamic code's resolution with upscale
/// `strides[0]`; blocks `1..` upsample the fused code to the frame. Block `i`
/// uses kernel `min(kernel_min + 2i, kernel_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionDecoderSpec {
    pub c1: usize,
    pub ch_min: usize,
    pub strides: Vec<usize>,
    #[serde(default = "default_reduction")]
    pub channel_reduction: f64,
    #[serde(default = "default_head_kernel")]
    pub head_kernel: usize,
    #[serde(default = "default_kernel_min")]
    pub kernel_min: usize,
    #[serde(default = "default_kernel_max")]
    pub kernel_max: usize,
    #[serde(default = "default_dynamic_kernel")]
    pub dynamic_kernel: usize,
    /// `(h_s, w_s, dim_s)`
    pub static_shape: CodeShape,
    /// `(h_d, w_d, dim_d)`
    pub dynamic_shape: CodeShape,
    /// `(H, W)`
    pub output: (usize, usize),
}

impl FusionDecoderSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.c1 == 0 || self.ch_min == 0 {
            return bad("c1 and ch_min must be positive".into());
        }
        if self.strides.is_empty() {
            return bad("strides must contain at least the static alignment factor".into());
        }
        if self.strides.contains(&0) {
            return bad(format!("strides {:?} contain a zero", self.strides));
        }
        if !(self.channel_reduction.is_finite() && self.channel_reduction > 1.0) {
            return bad(format!(
                "channel_reduction {} must exceed 1",
                self.channel_reduction
            ));
        }
        for (name, k) in [
            ("head_kernel", self.head_kernel),
            ("kernel_min", self.kernel_min),
            ("kernel_max", self.kernel_max),
            ("dynamic_kernel", self.dynamic_kernel),
        ] {
            if k.is_multiple_of(2) {
                return bad(format!("{name} {k} is not odd"));
            }
        }
        let (hs, ws, ds) = self.static_shape;
        let (hd, wd, dd) = self.dynamic_shape;
        if [hs, ws, ds, hd, wd, dd].contains(&0) {
            return bad("code shapes must have positive dimensions".into());
        }
        let align = self.strides[0];
        if hs * align != hd || ws * align != wd {
            return bad(format!(
                "static code {hs}x{ws} upscaled by strides[0]={align} gives {}x{}, but dynamic code is {hd}x{wd}",
                hs * align,
                ws * align
            ));
        }
        let rest: usize = self.strides[1..].iter().product();
        let (h, w) = self.output;
        if hd * rest != h || wd * rest != w {
            return bad(format!(
                "dynamic code {hd}x{wd} upscaled by product(strides[1..])={rest} gives {}x{}, but output is {h}x{w}",
                hd * rest,
                wd * rest
            ));
        }
        Ok(())
    }

    pub fn kernel_for_block(&self, index: usize) -> usize {
        (self.kernel_min + 2 * index).min(self.kernel_max)
    }

    /// Channel width produced by upsampling block `k` (block 0 produces `c1`).
    pub fn block_width(&self, k: usize) -> usize {
        let width = (self.c1 as f64 / self.channel_reduction.powi(k as i32)).round() as usize;
        width.max(self.ch_min)
    }

    pub fn static_align_block(&self) -> NervBlockSpec {
        NervBlockSpec {
            in_channels: self.static_shape.2,
            out_channels: self.c1,
            upscale: self.strides[0],
            kernel_size: self.kernel_for_block(0),
        }
    }

    pub fn dynamic_align_block(&self) -> NervBlockSpec {
        NervBlockSpec {
            in_channels: self.dynamic_shape.2,
            out_channels: self.c1,
            upscale: 1,
            kernel_size: self.dynamic_kernel,
        }
    }

    /// Stacked upsampling blocks after fusion, one per `strides[1..]` entry.
    pub fn upsampling_blocks(&self) -> Vec<NervBlockSpec> {
        let mut in_channels = self.c1;
        (1..self.strides.len())
            .map(|k| {
                let out_channels = self.block_width(k);
                let block = NervBlockSpec {
                    in_channels,
                    out_channels,
                    upscale: self.strides[k],
                    kernel_size: self.kernel_for_block(k),
                };
                in_channels = out_channels;
                block
            })
            .collect()
    }

    /// Channels entering the output head.
    pub fn head_in_channels(&self) -> usize {
        self.upsampling_blocks()
            .last()
            .map_or(self.c1, |b| b.out_channels)
    }

    /// Spatial size after every stage: static code, each block, output.
    pub fn shape_chain(&self) -> Vec<(usize, usize)> {
        let mut chain = vec![(self.static_shape.0, self.static_shape.1)];
        let (mut h, mut w) = (self.dynamic_shape.0, self.dynamic_shape.1);
        chain.push((h, w));
        for &s in &self.strides[1..] {
            h *= s;
            w *= s;
            chain.push((h, w));
        }
        chain
    }

    /// Closed-form count of decoder parameters (no code grids).
    pub fn decoder_param_count(&self) -> usize {
        let qkv = 3 * (self.c1 * self.c1 + self.c1);
        let head_in = self.head_in_channels();
        let head = 3 * head_in * self.head_kernel * self.head_kernel + 3;
        self.static_align_block().param_count()
            + self.dynamic_align_block().param_count()
            + qkv
            + self
                .upsampling_blocks()
                .iter()
                .map(NervBlockSpec::param_count)
                .sum::<usize>()
            + head
    }
}

/// Everything needed to rebuild a model without its training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub timeline: TimelineConfig,
    pub decoder: FusionDecoderSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.timeline.validate()?;
        self.decoder.validate()
    }

    pub fn static_grid_len(&self) -> usize {
        let (h, w, d) = self.decoder.static_shape;
        self.timeline.static_codes * h * w * d
    }

    pub fn dynamic_grid_len(&self) -> usize {
        let (h, w, d) = self.decoder.dynamic_shape;
        self.timeline.dynamic_codes * h * w * d
    }

    pub fn param_count(&self) -> usize {
        self.static_grid_len() + self.dynamic_grid_len() + self.decoder.decoder_param_count()
    }
}
