//! PSNR, MS-SSIM and bits per pixel.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returned when two frames are indistinguishable.
pub const PSNR_CAP: f64 = 100.0;

const MSE_FLOOR: f64 = 1e-10;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "frames have {a} and {b} values"
        )));
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::ShapeMismatch("empty frame".into()));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(total / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio of frames in `[0, 1]`, in dB.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// PSNR restricted to pixels where `region` is nonzero. `region` is `[H, W]`, frames `[H, W, 3]`.
pub fn masked_psnr(a: &[f32], b: &[f32], region: &[u8]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), region.len() * 3)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, &keep) in region.iter().enumerate() {
        if keep == 0 {
            continue;
        }
        for c in 0..3 {
            let d = a[p * 3 + c] as f64 - b[p * 3 + c] as f64;
            total += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(psnr_from_mse(total / count as f64))
}

/// Number of MS-SSIM scales usable for a frame whose shorter side is `side`.
pub fn ms_ssim_scales(side: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| side > (WINDOW - 1) << (s - 1))
        .unwrap_or(0)
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let centre = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - centre;
        *v = (-(x * x) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Separable "valid" Gaussian filtering of one `[h, w]` plane.
fn blur(img: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, oh, ow) = blur(x, h, w, g);
    let (my, _, _) = blur(y, h, w, g);
    let (sxx, _, _) = blur(&xx, h, w, g);
    let (syy, _, _) = blur(&yy, h, w, g);
    let (sxy, _, _) = blur(&xy, h, w, g);
    let n = (oh * ow) as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..oh * ow {
        let vx = sxx[i] - mx[i] * mx[i];
        let vy = syy[i] - my[i] * my[i];
        let cov = sxy[i] - mx[i] * my[i];
        let cs_i = (2.0 * cov + c2) / (vx + vy + c2);
        let lum = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        cs += cs_i;
        ssim += lum * cs_i;
    }
    (ssim / n, cs / n)
}

/// 2×2 average pooling; odd trailing rows/columns are zero-padded.
fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = vec![0.0; oh * ow];
    let (pad_y, pad_x) = (h % 2, w % 2);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut total = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let y = (2 * oy + dy) as isize - pad_y as isize;
                    let x = (2 * ox + dx) as isize - pad_x as isize;
                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                        total += img[y as usize * w + x as usize];
                    }
                }
            }
            out[oy * ow + ox] = total / 4.0;
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two `[H, W, 3]` frames, averaged over channels.
///
/// Frames whose shorter side cannot hold five scales use as many as fit, with
/// the leading weights renormalised to sum to one.
pub fn ms_ssim(a: &[f32], b: &[f32], height: usize, width: usize) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), height * width * 3)?;
    let scales = ms_ssim_scales(height.min(width));
    if scales == 0 {
        return Err(Error::TooSmall(format!(
            "MS-SSIM needs both sides larger than {}, frame is {height}x{width}",
            WINDOW - 1
        )));
    }
    let weights: Vec<f64> = {
        let w = &MS_SSIM_WEIGHTS[..scales];
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    };
    let g = gaussian_window();
    let mut sum = 0.0;
    for c in 0..3 {
        let mut x: Vec<f64> = a.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let mut y: Vec<f64> = b.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let (mut h, mut w) = (height, width);
        let mut value = 1.0;
        for (s, &weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_plane(&x, &y, h, w, &g);
            if s + 1 == scales {
                value *= ssim.max(0.0).powf(weight);
            } else {
                value *= cs.max(0.0).powf(weight);
                let (nx, nh, nw) = downsample(&x, h, w);
                let (ny, _, _) = downsample(&y, h, w);
                x = nx;
                y = ny;
                h = nh;
                w = nw;
            }
        }
        sum += value;
    }
    Ok((sum / 3.0).clamp(0.0, 1.0))
}

/// Bits per pixel of a `bytes`-long encoding of `frames` frames of `height × width`.
pub fn bpp(bytes: u64, frames: usize, height: usize, width: usize) -> f64 {
    (bytes * 8) as f64 / (frames * height * width) as f64
}

/// Per-frame quality of a decoded sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub frames: Vec<usize>,
    pub psnr: Vec<f64>,
    pub mean_psnr: f64,
    pub ms_ssim: Vec<f64>,
    pub mean_ms_ssim: f64,
    pub bpp: Option<f64>,
}

impl QualityReport {
    /// Scores `decoded[i]` against `reference[i]`; `frames` labels the rows.
    pub fn evaluate(
        frames: Vec<usize>,
        decoded: &[&[f32]],
        reference: &[&[f32]],
        height: usize,
        width: usize,
    ) -> Result<Self> {
        check_len(decoded.len(), reference.len())?;
        check_len(decoded.len(), frames.len())?;
        let mut psnrs = Vec::with_capacity(frames.len());
        let mut ssims = Vec::with_capacity(frames.len());
        for (d, r) in decoded.iter().zip(reference) {
            psnrs.push(psnr(d, r)?);
            ssims.push(ms_ssim(d, r, height, width)?);
        }
        Ok(Self {
            frames,
            mean_psnr: mean(&psnrs),
            mean_ms_ssim: mean(&ssims),
            psnr: psnrs,
            ms_ssim: ssims,
            bpp: None,
        })
    }

    pub fn with_bpp(mut self, bpp: f64) -> Self {
        self.bpp = Some(bpp);
        self
    }

    /// `frame,psnr,ms_ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr,ms_ssim\n");
        for ((f, p), s) in self.frames.iter().zip(&self.psnr).zip(&self.ms_ssim) {
            out.push_str(&format!("{f},{p:.6},{s:.6}\n"));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6}\n",
            self.mean_psnr, self.mean_ms_ssim
        ));
        out
    }
}

impl fmt::Display for QualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames   {}", self.frames.len())?;
        writeln!(f, "PSNR     {:.3} dB", self.mean_psnr)?;
        write!(f, "MS-SSIM  {:.5}", self.mean_ms_ssim)?;
        if let Some(bpp) = self.bpp {
            write!(f, "\nbpp      {bpp:.5}")?;
        }
        Ok(())
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
