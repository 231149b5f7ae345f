use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;

use super::FrameSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Extensions recognised when reading a frame directory.
pub const FRAME_EXTENSIONS: [&str; 2] = ["png", "bmp"];

fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Largest centred window of the target aspect ratio, then resized to `target`.
fn crop_and_scale(img: RgbImage, target: (u32, u32)) -> RgbImage {
    let (w, h) = img.dimensions();
    let (th, tw) = target;
    if (h, w) == (th, tw) {
        return img;
    }
    let (mut cw, mut ch) = (w, (w as u64 * th as u64 / tw as u64) as u32);
    if ch > h {
        ch = h;
        cw = (h as u64 * tw as u64 / th as u64) as u32;
    }
    let cropped = imageops::crop_imm(&img, (w - cw) / 2, (h - ch) / 2, cw, ch).to_image();
    if (ch, cw) == (th, tw) {
        cropped
    } else {
        imageops::resize(&cropped, tw, th, FilterType::Triangle)
    }
}

/// Reads every frame file in `dir` in numeric filename order.
///
/// With `target = Some((height, width))` frames are centre-cropped to the target
/// aspect ratio and resized; otherwise they keep their native size.
pub fn load_frames(dir: &Path, target: Option<(usize, usize)>) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| unreadable(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    if paths.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    paths.sort_by(|a, b| (frame_number(a), a.file_name()).cmp(&(frame_number(b), b.file_name())));

    let images: Vec<RgbImage> = paths
        .par_iter()
        .map(|p| {
            image::open(p)
                .map(|i| i.to_rgb8())
                .map_err(|e| unreadable(p, e))
        })
        .collect::<Result<_>>()?;
    let native = images[0].dimensions();
    for (img, p) in images.iter().zip(&paths) {
        if img.dimensions() != native {
            return Err(Error::InconsistentResolution {
                path: p.clone(),
                expected: (native.1, native.0),
                found: (img.dimensions().1, img.dimensions().0),
            });
        }
    }
    let target = target
        .map(|(h, w)| (h as u32, w as u32))
        .unwrap_or((native.1, native.0));
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::InvalidConfig(
            "target resolution must be positive".into(),
        ));
    }
    let (h, w) = (target.0 as usize, target.1 as usize);
    let frames: Vec<Vec<f32>> = images
        .into_par_iter()
        .map(|img| {
            crop_and_scale(img, target)
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 255.0)
                .collect()
        })
        .collect();
    let count = frames.len();
    let data = frames.concat();
    Ok(FrameSequence::new(Tensor::from_vec(&[count, h, w, 3], data)?)?.with_source(dir))
}

fn to_image(frame: &[f32], height: usize, width: usize) -> RgbImage {
    let raw = frame
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(width as u32, height as u32, raw)
        .expect("frame buffer matches its dimensions")
}

/// Writes `(index, frame)` pairs as `%05d.<extension>` files.
pub fn save_indexed_frames<'a>(
    frames: impl IntoIterator<Item = (usize, &'a [f32])>,
    height: usize,
    width: usize,
    dir: &Path,
    extension: &str,
) -> Result<Vec<PathBuf>> {
    let format = ImageFormat::from_extension(extension)
        .filter(|_| FRAME_EXTENSIONS.contains(&extension))
        .ok_or_else(|| {
            Error::InvalidConfig(format!("unsupported frame extension `{extension}`"))
        })?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (index, frame) in frames {
        if frame.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "frame {index} is not {height}x{width}x3"
            )));
        }
        let path = dir.join(format!("{index:05}.{extension}"));
        to_image(frame, height, width)
            .save_with_format(&path, format)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes every frame as `00000.png`, `00001.png`, ...
pub fn save_frames(seq: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    save_indexed_frames(
        (0..seq.len()).map(|t| (t, seq.frame(t))),
        seq.height(),
        seq.width(),
        dir,
        "png",
    )
}
