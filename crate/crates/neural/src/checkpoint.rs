//! Checkpoint file format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "CKPT"
//! version    u16
//! kind       u8       0 = stage 1, 1 = stage 2, 2 = LS classifier
//! config     u32 length + UTF-8 JSON snapshot
//! epoch      u32      epoch the stored parameters come from
//! history    u32 count, then per entry: epoch u32, train_loss f64, val_loss f64, val_accuracy f64 (NaN if absent)
//! tensors    u32 count, then per tensor: u16 name length + name, u8 rank, rank x u32 dims, f32 data
//! ```

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Network;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("truncated checkpoint: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointKind {
    Stage1,
    Stage2,
    LsClassifier,
}

impl CheckpointKind {
    fn code(self) -> u8 {
        match self {
            Self::Stage1 => 0,
            Self::Stage2 => 1,
            Self::LsClassifier => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self, CheckpointError> {
        match c {
            0 => Ok(Self::Stage1),
            1 => Ok(Self::Stage2),
            2 => Ok(Self::LsClassifier),
            other => Err(CheckpointError::Corrupt(format!("unknown kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: CheckpointKind,
    /// JSON snapshot of the configuration that produced the parameters.
    pub config: String,
    pub epoch: u32,
    pub history: Vec<EpochMetrics>,
    pub tensors: Vec<NamedTensor>,
}

impl ModelCheckpoint {
    /// Snapshot every parameter and buffer of `net`.
    pub fn from_network(
        net: &mut Network<f32>,
        kind: CheckpointKind,
        config: String,
        epoch: u32,
        history: Vec<EpochMetrics>,
    ) -> Self {
        let mut tensors = Vec::new();
        for p in net.all_params_mut() {
            tensors.push(NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            });
        }
        for b in net.all_buffers_mut() {
            tensors.push(NamedTensor {
                name: b.name.clone(),
                shape: b.value.shape().to_vec(),
                data: b.value.data().to_vec(),
            });
        }
        Self { kind, config, epoch, history, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copy stored tensors whose names start with `prefix` into `net`.
    ///
    /// Every matching parameter or buffer of the network must be present with
    /// an identical shape. Returns the number of tensors copied.
    pub fn load_into(&self, net: &mut Network<f32>, prefix: &str) -> Result<usize, CheckpointError> {
        let mut copied = 0;
        let mut assign = |name: &str, value: &mut Tensor<f32>| -> Result<(), CheckpointError> {
            if !name.starts_with(prefix) {
                return Ok(());
            }
            let t = self.tensor(name).ok_or_else(|| CheckpointError::Mismatch(format!("missing tensor {name}")))?;
            if t.shape != value.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape,
                    value.shape()
                )));
            }
            value.data_mut().copy_from_slice(&t.data);
            copied += 1;
            Ok(())
        };
        for p in net.all_params_mut() {
            assign(&p.name, &mut p.value)?;
        }
        for b in net.all_buffers_mut() {
            assign(&b.name, &mut b.value)?;
        }
        Ok(copied)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.history.len() as u32).to_le_bytes());
        for h in &self.history {
            out.extend_from_slice(&h.epoch.to_le_bytes());
            out.extend_from_slice(&h.train_loss.to_le_bytes());
            out.extend_from_slice(&h.val_loss.to_le_bytes());
            out.extend_from_slice(&h.val_accuracy.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let kind = CheckpointKind::from_code(r.u8()?)?;
        let clen = r.u32()? as usize;
        let config = String::from_utf8(r.take(clen)?.to_vec())
            .map_err(|e| CheckpointError::Corrupt(format!("config is not UTF-8: {e}")))?;
        let epoch = r.u32()?;
        let nh = r.u32()? as usize;
        let mut history = Vec::with_capacity(nh.min(1 << 16));
        for _ in 0..nh {
            history.push(EpochMetrics {
                epoch: r.u32()?,
                train_loss: r.f64()?,
                val_loss: r.f64()?,
                val_accuracy: r.f64()?,
            });
        }
        let nt = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(nt.min(1 << 16));
        for _ in 0..nt {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|e| CheckpointError::Corrupt(format!("tensor name is not UTF-8: {e}")))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let count = count.ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape overflow")))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { kind, config, epoch, history, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated { offset: self.pos, needed: n - (self.bytes.len() - self.pos) }),
        }
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        ModelCheckpoint {
            kind: CheckpointKind::Stage2,
            config: "{\"a\":1}".into(),
            epoch: 3,
            history: vec![EpochMetrics { epoch: 0, train_loss: 1.5, val_loss: 1.25, val_accuracy: f64::NAN }],
            tensors: vec![NamedTensor { name: "w".into(), shape: vec![2, 2], data: vec![1.0, -2.0, 0.5, 3.25] }],
        }
    }

    #[test]
    fn byte_round_trip() {
        let bytes = sample().to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensors, sample().tensors);
    }

    #[test]
    fn corrupted_headers_are_typed_errors() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes[..2]), Err(CheckpointError::Truncated { .. })));
        bytes[4] = 9;
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes), Err(CheckpointError::Version(9))));
        bytes[0] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic(_))));
    }
}
