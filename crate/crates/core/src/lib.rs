//! Video representation with learnable static/dynamic code grids and a
//! cross-channel attention fusion decoder.
//!
//! A video of `T` frames is stored as a sparse grid of static codes, a denser
//! grid of dynamic codes, and a small convolutional decoder. Frame `t` is decoded
//! by blending the two nearest static codes, interpolating the dynamic codes,
//! fusing both with channel attention and upsampling to `H×W×3`.

mod bytes;
pub mod compression;
pub mod decoder;
pub mod error;
pub mod grids;
pub mod media;
pub mod metrics;
pub mod tensor;
pub mod training;

pub use decoder::{FusionDecoderSpec, Model, ModelSpec, ParameterStore};
pub use error::{Error, Result};
pub use grids::TimelineConfig;
pub use media::FrameSequence;
pub use tensor::{Real, Tensor};
