//! TOML run configuration and its resolution into library types.

use std::fs;
use std::path::{Path, PathBuf};

use dsnerv::decoder::FusionDecoderSpec;
use dsnerv::media::{mask_boxes, MaskSpec, SynthKind, FRAME_EXTENSIONS};
use dsnerv::training::{TaskKind, TaskSpec, TrainConfig};
use dsnerv::{ModelSpec, TimelineConfig};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub timeline: TimelineSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub compress: CompressSection,
}

/// Either a directory of numbered frames or a synthetic clip.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub synth: Option<SynthKind>,
    /// Required for synthetic clips; counted from the directory otherwise.
    pub frames: Option<usize>,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineSection {
    pub static_codes: usize,
    pub dynamic_codes: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub c1: usize,
    pub ch_min: usize,
    pub strides: Vec<usize>,
    #[serde(default = "default_reduction")]
    pub channel_reduction: f64,
    #[serde(default = "one")]
    pub head_kernel: usize,
    #[serde(default = "one")]
    pub kernel_min: usize,
    #[serde(default = "five")]
    pub kernel_max: usize,
    #[serde(default = "three")]
    pub dynamic_kernel: usize,
    pub static_shape: [usize; 3],
    pub dynamic_shape: [usize; 3],
}

fn default_reduction() -> f64 {
    1.2
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

fn five() -> usize {
    5
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: Option<TaskKind>,
    pub mask: Option<MaskSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressSection {
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default = "default_bits")]
    pub bits: Vec<u8>,
}

impl Default for CompressSection {
    fn default() -> Self {
        Self {
            sparsity: 0.0,
            bits: default_bits(),
        }
    }
}

fn default_bits() -> Vec<u8> {
    vec![8]
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Directory(PathBuf),
    Synth(SynthKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub source: Source,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

/// A configuration checked end to end; nothing here can fail at training time.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: Dataset,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub task: TaskSpec,
    pub sparsity: f64,
    pub bits: Vec<u8>,
}

fn field(path: &str, message: impl ToString) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().to_string();
        field(if path == "." { "<root>" } else { &path }, message)
    })
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Read {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut config = parse(&text)?;
    if let Some(p) = config.data.path.as_mut() {
        if p.is_relative() {
            *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
        }
    }
    Ok(config)
}

/// Number of frame files a directory would yield.
pub fn count_frame_files(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Read {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .count())
}

impl RunConfig {
    pub fn resolve(self, seed_override: Option<u64>) -> Result<Resolved> {
        let seed = seed_override.unwrap_or(self.seed);
        let data = &self.data;
        let source = match (&data.path, data.synth) {
            (Some(p), None) => Source::Directory(p.clone()),
            (None, Some(kind)) => Source::Synth(kind),
            _ => return Err(field("data", "set exactly one of `path` and `synth`")),
        };
        let frames = match (&source, data.frames) {
            (Source::Synth(_), Some(n)) => n,
            (Source::Synth(_), None) => {
                return Err(field("data.frames", "synthetic clips need a frame count"))
            }
            (Source::Directory(dir), declared) => {
                let found = count_frame_files(dir)?;
                if declared.is_some_and(|n| n != found) {
                    return Err(field(
                        "data.frames",
                        format!(
                            "{} frames declared, {found} found in {}",
                            declared.unwrap(),
                            dir.display()
                        ),
                    ));
                }
                found
            }
        };
        if data.height == 0 || data.width == 0 {
            return Err(field("data", "height and width must be positive"));
        }
        let timeline = TimelineConfig::new(
            frames,
            self.timeline.static_codes,
            self.timeline.dynamic_codes,
        )
        .map_err(|e| field("timeline", e))?;
        let m = &self.model;
        let decoder = FusionDecoderSpec {
            c1: m.c1,
            ch_min: m.ch_min,
            strides: m.strides.clone(),
            channel_reduction: m.channel_reduction,
            head_kernel: m.head_kernel,
            kernel_min: m.kernel_min,
            kernel_max: m.kernel_max,
            dynamic_kernel: m.dynamic_kernel,
            static_shape: m.static_shape.into(),
            dynamic_shape: m.dynamic_shape.into(),
            output: (data.height, data.width),
        };
        decoder.validate().map_err(|e| field("model", e))?;

        if self.train.seed != 0 && self.train.seed != seed {
            return Err(field("train.seed", "use the top-level `seed`"));
        }
        let train = TrainConfig { seed, ..self.train };
        train.validate().map_err(|e| field("train", e))?;

        let kind = self.task.kind.unwrap_or(TaskKind::Reconstruction);
        let mask = match kind {
            TaskKind::Inpainting => Some(self.task.mask.unwrap_or(MaskSpec::Central)),
            _ => self.task.mask,
        };
        if let Some(mask) = mask {
            mask_boxes(mask, data.height, data.width, seed).map_err(|e| field("task.mask", e))?;
        }
        let task = TaskSpec::for_kind(kind, frames, mask).map_err(|e| field("task", e))?;
        if task.train_indices.len() < 2 {
            return Err(field("task", "fewer than two training frames"));
        }

        if !(0.0..1.0).contains(&self.compress.sparsity) {
            return Err(field("compress.sparsity", "must lie in [0, 1)"));
        }
        if let Some(b) = self.compress.bits.iter().find(|b| !(2..=16).contains(*b)) {
            return Err(field(
                "compress.bits",
                format!("bit depth {b} is outside 2..=16"),
            ));
        }
        if self.compress.bits.is_empty() {
            return Err(field("compress.bits", "needs at least one bit depth"));
        }

        Ok(Resolved {
            seed,
            out: self.out,
            dataset: Dataset {
                source,
                frames,
                height: data.height,
                width: data.width,
                seed,
            },
            spec: ModelSpec { timeline, decoder },
            train,
            task,
            sparsity: self.compress.sparsity,
            bits: self.compress.bits,
        })
    }
}
