use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dsnerv::compression::{compress_model, decompress_model, CompressedModel};
use dsnerv::media::{
    build_mask, decode_checkpoint, encode_checkpoint, load_frames, save_indexed_frames,
    synth_video, MaskSpec,
};
use dsnerv::metrics::{masked_psnr, QualityReport};
use dsnerv::training::{evaluate_psnr, train_with};
use dsnerv::{Error, FrameSequence, Model, ModelSpec};
use rayon::prelude::*;

use crate::config::{Dataset, Resolved, Source};
use crate::error::{CliError, Result};
use crate::outputs::Outputs;

pub const CHECKPOINT_FILE: &str = "model.dsnc";
pub const DEFAULT_OUT: &str = "out";
pub const RD_HEADER: &str = "bits,sparsity,bytes,bpp,psnr";

/// Options shared by every command.
pub struct Context {
    pub config: Option<Resolved>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.config.as_ref().and_then(|c| c.out.clone()))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn require_config(&self, command: &str) -> Result<&Resolved> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("`{command}` needs --config")))
    }

    fn checkpoint_path(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.unwrap_or_else(|| self.out_dir().join(CHECKPOINT_FILE))
    }

    fn seed(&self) -> u64 {
        self.seed
            .or(self.config.as_ref().map(|c| c.seed))
            .unwrap_or(0)
    }

    /// The dataset a stored model is scored against: `--data`, else the config's.
    fn dataset_for(&self, spec: &ModelSpec, data: Option<PathBuf>) -> Result<Dataset> {
        let (h, w) = spec.decoder.output;
        let dataset = match (data, &self.config) {
            (Some(dir), _) => Dataset {
                source: Source::Directory(dir),
                frames: spec.timeline.frames,
                height: h,
                width: w,
                seed: self.seed(),
            },
            (None, Some(c)) => c.dataset.clone(),
            (None, None) => {
                return Err(CliError::Usage(
                    "no dataset: pass --data DIR or --config".into(),
                ))
            }
        };
        if dataset.frames != spec.timeline.frames || (dataset.height, dataset.width) != (h, w) {
            return Err(Error::ConfigMismatch(format!(
                "model expects {} frames of {h}x{w}, dataset has {} frames of {}x{}",
                spec.timeline.frames, dataset.frames, dataset.height, dataset.width
            ))
            .into());
        }
        Ok(dataset)
    }

    fn eval_indices(&self, frames: usize) -> Vec<usize> {
        match &self.config {
            Some(c) if c.task.eval_indices.iter().all(|&i| i < frames) => {
                c.task.eval_indices.clone()
            }
            _ => (0..frames).collect(),
        }
    }
}

pub fn load_dataset(dataset: &Dataset) -> Result<FrameSequence> {
    let seq = match &dataset.source {
        Source::Directory(dir) => load_frames(dir, Some((dataset.height, dataset.width)))?,
        Source::Synth(kind) => synth_video(
            *kind,
            dataset.frames,
            dataset.height,
            dataset.width,
            dataset.seed,
        )?,
    };
    if seq.len() != dataset.frames {
        return Err(Error::ConfigMismatch(format!(
            "expected {} frames, loaded {}",
            dataset.frames,
            seq.len()
        ))
        .into());
    }
    Ok(seq)
}

pub fn train(ctx: &Context) -> Result<()> {
    let config = ctx.require_config("train")?;
    let start = Instant::now();
    let mut outputs = Outputs::default();
    let dir = outputs.dir(&ctx.out_dir())?;
    let data = load_dataset(&config.dataset)?;
    let model = Model::<f32>::init(config.spec.clone(), config.seed)?;
    let params = model.param_count();
    let every = (config.train.epochs / 10).max(1);
    let (model, log) = train_with(&data, model, &config.task, &config.train, |r| {
        if (r.epoch + 1) % every == 0 {
            eprintln!(
                "epoch {:>5}  loss {:.6}  train {:.2} dB  eval {:.2} dB",
                r.epoch + 1,
                r.loss,
                r.train_psnr,
                r.eval_psnr
            );
        }
    })?;
    let checkpoint = outputs.write(dir.join(CHECKPOINT_FILE), encode_checkpoint(&model))?;
    outputs.write(dir.join("train_log.csv"), log.to_csv())?;
    let last = log.final_record().expect("at least one epoch");
    println!(
        "trained {} steps: final eval PSNR {:.4} dB (initial {:.4} dB), {params} params, {:.1} s -> {}",
        log.step_losses.len(),
        last.eval_psnr,
        log.initial_eval_psnr,
        start.elapsed().as_secs_f64(),
        checkpoint.display()
    );
    outputs.commit();
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Reconstruct,
    Interpolate,
    Inpaint,
}

fn decode_all(model: &Model<f32>, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
    Ok(indices
        .par_iter()
        .map(|&t| model.decode(t as f64).map(|f| f.into_data()))
        .collect::<dsnerv::Result<_>>()?)
}

fn region_psnr(
    decoded: &[Vec<f32>],
    data: &FrameSequence,
    indices: &[usize],
    mask: MaskSpec,
    seed: u64,
) -> Result<f64> {
    let hidden: Vec<u8> = build_mask(mask, data.height(), data.width(), seed)?
        .iter()
        .map(|&m| 1 - m)
        .collect();
    let scores = decoded
        .iter()
        .zip(indices)
        .map(|(d, &t)| masked_psnr(d, data.clean_frame(t), &hidden))
        .collect::<dsnerv::Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn decode(
    ctx: &Context,
    protocol: Protocol,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(&ctx.checkpoint_path(checkpoint))?;
    let dataset = ctx.dataset_for(&model.spec, data)?;
    let mut outputs = Outputs::default();
    let dir = outputs.dir(&ctx.out_dir())?;
    let seq = load_dataset(&dataset)?;
    let frames = seq.len();
    let indices: Vec<usize> = match protocol {
        Protocol::Interpolate => (1..frames).step_by(2).collect(),
        Protocol::Reconstruct | Protocol::Inpaint => (0..frames).collect(),
    };
    let decoded = decode_all(&model, &indices)?;
    let frame_dir = outputs.dir(&dir.join("frames"))?;
    for &t in &indices {
        outputs.track(frame_dir.join(format!("{t:05}.png")));
    }
    save_indexed_frames(
        indices
            .iter()
            .copied()
            .zip(decoded.iter().map(Vec::as_slice)),
        seq.height(),
        seq.width(),
        &frame_dir,
        "png",
    )?;
    let views: Vec<&[f32]> = decoded.iter().map(Vec::as_slice).collect();
    let reference: Vec<&[f32]> = indices.iter().map(|&t| seq.clean_frame(t)).collect();
    let report = QualityReport::evaluate(
        indices.clone(),
        &views,
        &reference,
        seq.height(),
        seq.width(),
    )?;
    outputs.write(dir.join("quality.csv"), report.to_csv())?;
    println!("{report}");
    if protocol == Protocol::Inpaint {
        let mask = ctx
            .config
            .as_ref()
            .and_then(|c| c.task.mask)
            .unwrap_or(MaskSpec::Central);
        let region = region_psnr(&decoded, &seq, &indices, mask, ctx.seed())?;
        println!("masked region PSNR {region:.3} dB");
    }
    println!("{} frames -> {}", indices.len(), frame_dir.display());
    outputs.commit();
    Ok(())
}

pub fn compress(
    ctx: &Context,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    sparsity: Option<f64>,
    bits: Option<Vec<u8>>,
) -> Result<()> {
    let model = load_model(&ctx.checkpoint_path(checkpoint))?;
    let dataset = ctx.dataset_for(&model.spec, data)?;
    let sparsity = sparsity
        .or(ctx.config.as_ref().map(|c| c.sparsity))
        .unwrap_or(0.0);
    let bits = bits
        .or_else(|| ctx.config.as_ref().map(|c| c.bits.clone()))
        .unwrap_or_else(|| vec![8]);
    if bits.is_empty() {
        return Err(CliError::Usage("--bits needs at least one value".into()));
    }
    let mut outputs = Outputs::default();
    let dir = outputs.dir(&ctx.out_dir())?;
    let seq = load_dataset(&dataset)?;
    let indices = ctx.eval_indices(seq.len());
    let mut csv = format!("{RD_HEADER}\n");
    for &b in &bits {
        let compressed = compress_model(&model, sparsity, b)?;
        let bytes = compressed.to_bytes();
        let path = outputs.write(dir.join(format!("model-{b}b.dsnv")), &bytes)?;
        let restored = decompress_model(&CompressedModel::from_bytes(&bytes)?)?;
        let psnr = evaluate_psnr(&restored, &seq, &indices)?;
        let bpp = compressed.bpp();
        csv.push_str(&format!(
            "{b},{sparsity},{},{bpp:.8},{psnr:.6}\n",
            bytes.len()
        ));
        println!(
            "{b:>2} bits: {} bytes, {bpp:.6} bpp, PSNR {psnr:.4} dB -> {}",
            bytes.len(),
            path.display()
        );
    }
    outputs.write(dir.join("rd.csv"), csv)?;
    outputs.commit();
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Read {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(decode_checkpoint(&read(path)?)?)
}

pub fn decompress(ctx: &Context, bitstream: &Path) -> Result<()> {
    let compressed = CompressedModel::from_bytes(&read(bitstream)?)?;
    let model = decompress_model(&compressed)?;
    let mut outputs = Outputs::default();
    let dir = outputs.dir(&ctx.out_dir())?;
    let path = outputs.write(dir.join("decompressed.dsnc"), encode_checkpoint(&model))?;
    let (h, w) = model.spec.decoder.output;
    println!(
        "bpp {:.6} ({} bytes over {} frames of {h}x{w}) -> {}",
        compressed.bpp(),
        compressed.byte_len(),
        model.spec.timeline.frames,
        path.display()
    );
    outputs.commit();
    Ok(())
}

pub fn eval(
    ctx: &Context,
    checkpoint: Option<PathBuf>,
    bitstream: Option<PathBuf>,
    data: Option<PathBuf>,
) -> Result<()> {
    let (model, bpp) = match bitstream {
        Some(path) => {
            let compressed = CompressedModel::from_bytes(&read(&path)?)?;
            (decompress_model(&compressed)?, Some(compressed.bpp()))
        }
        None => (load_model(&ctx.checkpoint_path(checkpoint))?, None),
    };
    let dataset = ctx.dataset_for(&model.spec, data)?;
    let mut outputs = Outputs::default();
    let dir = outputs.dir(&ctx.out_dir())?;
    let seq = load_dataset(&dataset)?;
    let indices = ctx.eval_indices(seq.len());
    let decoded = decode_all(&model, &indices)?;
    let views: Vec<&[f32]> = decoded.iter().map(Vec::as_slice).collect();
    let reference: Vec<&[f32]> = indices.iter().map(|&t| seq.clean_frame(t)).collect();
    let mut report =
        QualityReport::evaluate(indices, &views, &reference, seq.height(), seq.width())?;
    if let Some(bpp) = bpp {
        report = report.with_bpp(bpp);
    }
    outputs.write(dir.join("eval.csv"), report.to_csv())?;
    println!("{report}");
    outputs.commit();
    Ok(())
}

pub fn info(path: &Path) -> Result<()> {
    let bytes = read(path)?;
    let (spec, bpp) = if bytes.starts_with(b"DSNV") {
        let c = CompressedModel::from_bytes(&bytes)?;
        let bpp = c.bpp();
        (c.spec, Some(bpp))
    } else {
        (decode_checkpoint(&bytes)?.spec, None)
    };
    let total = spec.param_count();
    let share = |n: usize| 100.0 * n as f64 / total as f64;
    let (statics, dynamics) = (spec.static_grid_len(), spec.dynamic_grid_len());
    let decoder = spec.decoder.decoder_param_count();
    println!(
        "{}",
        serde_json::to_string_pretty(&spec).expect("model spec serializes")
    );
    println!("parameters     {total} ({:.4}M)", total as f64 / 1e6);
    println!("static codes   {statics} ({:.4}%)", share(statics));
    println!("dynamic codes  {dynamics} ({:.4}%)", share(dynamics));
    println!(
        "code grids     {} ({:.4}%)",
        statics + dynamics,
        share(statics + dynamics)
    );
    println!("decoder        {decoder} ({:.4}%)", share(decoder));
    if let Some(bpp) = bpp {
        println!("bpp            {bpp:.6} ({} bytes)", bytes.len());
    }
    Ok(())
}
