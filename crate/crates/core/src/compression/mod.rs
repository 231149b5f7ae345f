//! Pruning, quantisation and entropy coding of a trained model into a bitstream.
//!
//! Bitstream layout, little-endian:
//!
//! ```text
//! "DSNV" | version u16 | spec JSON (u32 length + bytes) | tensor count u32
//! per tensor: name (u32 length + bytes) | rank u32 | dims u32...
//!             | min f32 | scale f32 | bits u8 | huffman stream
//! ```
//!
//! The Huffman stream carries its own code table and length-prefixed payload.

mod huffman;
mod prune;
mod quant;

pub use huffman::{entropy_decode, entropy_encode, MAX_CODE_LEN, MAX_SYMBOL};
pub use prune::{prune, prune_global, PruneResult};
pub use quant::{dequantize, quantize, QuantSpec, MAX_BITS, MIN_BITS};

use rayon::prelude::*;

use crate::bytes::{Reader, Writer};
use crate::decoder::{zero_store, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::metrics;

const MAGIC: &[u8; 4] = b"DSNV";
pub const BITSTREAM_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub quant: QuantSpec,
    /// Entropy-coded quantisation codes.
    pub stream: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedModel {
    pub spec: ModelSpec,
    pub tensors: Vec<CompressedTensor>,
}

impl CompressedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(BITSTREAM_VERSION);
        w.blob(&serde_json::to_vec(&self.spec).expect("model spec serializes"));
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.blob(t.name.as_bytes());
            w.shape(&t.shape);
            w.f32(t.quant.min);
            w.f32(t.quant.scale);
            w.u8(t.quant.bits);
            w.bytes(&t.stream);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, Error::CorruptStream);
        if r.take(4, "magic")? != MAGIC {
            return r.fail("not a bitstream (bad magic)");
        }
        let version = r.u16("version")?;
        if version != BITSTREAM_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: BITSTREAM_VERSION,
            });
        }
        let spec: ModelSpec = serde_json::from_slice(r.blob("spec")?)
            .map_err(|e| Error::CorruptStream(format!("spec blob: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let shape = r.shape("tensor shape")?;
            let quant = QuantSpec {
                min: r.f32("quant min")?,
                scale: r.f32("quant scale")?,
                bits: r.u8("quant bits")?,
            };
            if !(MIN_BITS..=MAX_BITS).contains(&quant.bits)
                || !quant.min.is_finite()
                || !quant.scale.is_finite()
            {
                return r.fail(format!(
                    "tensor `{name}` has invalid quantisation parameters"
                ));
            }
            let start = r.position();
            huffman::decode_stream(&mut r)?;
            let end = r.position();
            tensors.push(CompressedTensor {
                name,
                shape,
                quant,
                stream: bytes[start..end].to_vec(),
            });
        }
        r.finish()?;
        Ok(Self { spec, tensors })
    }

    pub fn byte_len(&self) -> usize {
        self.to_bytes().len()
    }

    /// Bits per pixel of the whole container over the video it represents.
    pub fn bpp(&self) -> f64 {
        let (h, w) = self.spec.decoder.output;
        metrics::bpp(self.byte_len() as u64, self.spec.timeline.frames, h, w)
    }
}

/// Prunes decoder weights, quantises every tensor to `bits` and entropy-codes the codes.
pub fn compress_model(model: &Model<f32>, sparsity: f64, bits: u8) -> Result<CompressedModel> {
    let pruned = prune(&model.params, sparsity)?;
    let tensors = pruned
        .store
        .tensors()
        .par_iter()
        .map(|p| {
            let (codes, quant) = quantize(p.tensor.data(), bits)?;
            Ok(CompressedTensor {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                quant,
                stream: entropy_encode(&codes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressedModel {
        spec: model.spec.clone(),
        tensors,
    })
}

/// Rebuilds the dequantised model.
pub fn decompress_model(compressed: &CompressedModel) -> Result<Model<f32>> {
    let mut params = zero_store::<f32>(&compressed.spec)?;
    let mut slots = params.tensors_mut();
    if slots.len() != compressed.tensors.len() {
        return Err(Error::CorruptStream(format!(
            "{} tensors stored, spec defines {}",
            compressed.tensors.len(),
            slots.len()
        )));
    }
    for (slot, t) in slots.iter_mut().zip(&compressed.tensors) {
        if slot.name != t.name || slot.tensor.shape() != t.shape.as_slice() {
            return Err(Error::CorruptStream(format!(
                "tensor `{}` {:?} does not match spec tensor `{}` {:?}",
                t.name,
                t.shape,
                slot.name,
                slot.tensor.shape()
            )));
        }
        let codes = entropy_decode(&t.stream)?;
        let levels = t.quant.levels();
        if codes.len() != slot.tensor.len() || codes.iter().any(|&c| c > levels) {
            return Err(Error::CorruptStream(format!(
                "tensor `{}` payload does not fit its shape",
                t.name
            )));
        }
        slot.tensor
            .data_mut()
            .copy_from_slice(&dequantize::<f32>(&codes, &t.quant));
    }
    drop(slots);
    Model::from_parts(compressed.spec.clone(), params)
}
