//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "STPL"
//! u32     version (1)
//! u32     dtype (0 = f32, 1 = f64)
//! u32     metadata length, then that many bytes of JSON
//! u32     tensor count
//! tensor* u32 name length, name (UTF-8), u32 ndim, u64 dims[ndim], data
//! ```
//!
//! Model parameters come first in declaration order. Any further tensors
//! (optimizer moments) follow under an `optim.` prefix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"STPL";
const VERSION: u32 = 1;
/// Prefix of tensors that are not model parameters.
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub vocab: usize,
    pub blank_id: usize,
    /// Symbol of label id `i + 1`.
    #[serde(default)]
    pub symbols: Vec<String>,
}

/// Where a training run stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub phase: String,
    pub step: usize,
    pub seed: u64,
    pub initial_loss: Option<f64>,
    pub diverging_steps: usize,
    pub best_val_loss: Option<f64>,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    pub head: Option<HeadMeta>,
    pub training: Option<TrainingMeta>,
}

/// In-memory checkpoint. Values are held as `f64` but already rounded to
/// `dtype`, so saving is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub dtype: DType,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

fn round(t: &Tensor<f64>, dtype: DType) -> Tensor<f64> {
    match dtype {
        DType::F64 => t.clone(),
        DType::F32 => t.map(|v| v as f32 as f64),
    }
}

impl Checkpoint {
    pub fn from_encoder<T: Real>(encoder: &Encoder<T>, dtype: DType) -> Self {
        let tensors = encoder
            .params()
            .iter()
            .map(|(name, t)| (name.to_string(), round(&t.cast(), dtype)))
            .collect();
        Self {
            meta: CheckpointMeta {
                encoder: encoder.config().clone(),
                head: encoder.vocab().map(|vocab| HeadMeta {
                    vocab,
                    blank_id: 0,
                    symbols: Vec::new(),
                }),
                training: None,
            },
            dtype,
            tensors,
        }
    }

    /// Rebuilds the encoder (and head) the checkpoint describes.
    pub fn to_encoder<T: Real>(&self) -> Result<Encoder<T>> {
        let mut enc = Encoder::<T>::new(self.meta.encoder.clone(), 0)?;
        if let Some(head) = &self.meta.head {
            if head.blank_id != 0 {
                return Err(Error::Checkpoint(format!(
                    "blank id {} is not supported, expected 0",
                    head.blank_id
                )));
            }
            enc.add_head(head.vocab, 0)?;
        }
        let params: Vec<(String, Tensor<T>)> = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(OPTIM_PREFIX))
            .map(|(n, t)| (n.clone(), t.cast()))
            .collect();
        enc.load_params(&params)?;
        Ok(enc)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: &Tensor<f64>) {
        self.tensors.push((name.into(), round(tensor, self.dtype)));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dtype as u32).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                match self.dtype {
                    DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(r.u32()?)?;
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.width())?;
            let data = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            meta,
            dtype,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| Error::Path {
            path: path.display().to_string(),
            cause: source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Path {
            path: path.display().to_string(),
            cause: source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut enc = Encoder::<f64>::from_preset("tiny", 3).unwrap();
        enc.add_head(5, 3).unwrap();
        for dtype in [DType::F32, DType::F64] {
            let ck = Checkpoint::from_encoder(&enc, dtype);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            let rebuilt = back.to_encoder::<f64>().unwrap();
            let again = Checkpoint::from_encoder(&rebuilt, dtype).to_bytes().unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let enc = Encoder::<f64>::from_preset("tiny", 3).unwrap();
        let bytes = Checkpoint::from_encoder(&enc, DType::F32).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn optimizer_tensors_are_ignored_by_the_model() {
        let enc = Encoder::<f64>::from_preset("tiny", 3).unwrap();
        let mut ck = Checkpoint::from_encoder(&enc, DType::F64);
        ck.push("optim.m.mask_emb", &Tensor::zeros(&[64]));
        let rebuilt = ck.to_encoder::<f64>().unwrap();
        assert_eq!(rebuilt.params().numel(), enc.params().numel());
    }
}
