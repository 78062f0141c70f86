//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "TRKPRED\0"
//! version    u32
//! meta_len   u32      followed by meta_len bytes of JSON:
//!                     {"model": ModelConfig, "train": TrainConfig|null, "seed": u64}
//! count      u32      number of tensors, then per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   ndim     u8, then ndim × u64 dimensions
//!   data     prod(dims) × f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TRKPRED\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train: Option<TrainConfig>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: Option<TrainConfig>,
    seed: u64,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        model: ck.params.config.clone(),
        train: ck.train.clone(),
        seed: ck.seed,
    })
    .expect("metadata serializes");
    let mut out = Vec::with_capacity(64 + meta.len() + 8 * ck.params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let tensors = ck.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for ((name, data), shape) in tensors.into_iter().zip(ck.params.tensor_shapes()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated checkpoint")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let meta_len = r.u32()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("metadata: {e}"))?;
    let mut params = ModelParams::zeros(meta.model).map_err(|e| e.to_string())?;
    let shapes = params.tensor_shapes();
    let count = r.u32()? as usize;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(format!("expected {} tensors, found {count}", tensors.len()));
    }
    for ((name, data), shape) in tensors.iter_mut().zip(&shapes) {
        let len = r.u16()? as usize;
        let got = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?;
        if got != *name {
            return Err(format!("expected tensor `{name}`, found `{got}`"));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        if dims != *shape {
            return Err(format!("tensor `{name}` has shape {dims:?}, config implies {shape:?}"));
        }
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    drop(tensors);
    if r.pos != buf.len() {
        return Err("trailing bytes after last tensor".into());
    }
    Ok(Checkpoint {
        params,
        train: meta.train,
        seed: meta.seed,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf).map_err(|m| Error::parse(path, 0, m))
}
