use std::fs;
use std::path::Path;

use crate::bytes::{Reader, Writer};
use crate::decoder::{zero_store, Model, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DSNC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// `DSNC | version u16 | spec JSON blob | tensor count u32 | tensors`, where
/// each tensor is `name blob | rank u32 | dims u32... | f32 LE values`.
pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.blob(&serde_json::to_vec(&model.spec).expect("model spec serializes"));
    let tensors = model.params.tensors();
    w.u32(tensors.len() as u32);
    for p in tensors {
        w.blob(p.name.as_bytes());
        w.shape(p.tensor.shape());
        for &v in p.tensor.data() {
            w.f32(v);
        }
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader::new(bytes, Error::Corrupt);
    if r.take(4, "magic")? != MAGIC {
        return r.fail("not a checkpoint (bad magic)");
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let spec: ModelSpec = serde_json::from_slice(r.blob("spec")?)
        .map_err(|e| Error::Corrupt(format!("spec blob: {e}")))?;
    let mut params = zero_store::<f32>(&spec)
        .map_err(|e| Error::Corrupt(format!("stored spec is invalid: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return r.fail(format!(
            "{count} tensors stored, spec defines {}",
            slots.len()
        ));
    }
    for slot in slots.iter_mut() {
        let name = r.string("tensor name")?;
        if name != slot.name {
            return r.fail(format!("expected tensor `{}`, found `{name}`", slot.name));
        }
        let shape = r.shape("tensor shape")?;
        if shape != slot.tensor.shape() {
            return r.fail(format!(
                "tensor `{name}` has shape {shape:?}, spec needs {:?}",
                slot.tensor.shape()
            ));
        }
        for v in slot.tensor.data_mut() {
            *v = r.f32("tensor payload")?;
        }
    }
    drop(slots);
    r.finish()?;
    Model::from_parts(spec, params)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    decode_checkpoint(&fs::read(path)?)
}
