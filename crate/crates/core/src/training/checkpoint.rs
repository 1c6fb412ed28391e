//! Binary checkpoint file.
//!
//! ```text
//! "NERCKPT1"            8-byte magic
//! u32 LE                length of the JSON header in bytes
//! JSON header           CheckpointHeader
//! f64 LE values         every tensor, in header order, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainConfig};
use crate::error::{Error, Result};
use crate::params::{assign, flatten, layout};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NERCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub schema_fingerprint: String,
    pub scale: f64,
    pub layer_dim: usize,
    pub fg_labels: usize,
    pub cg_labels: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Trained parameters plus everything needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    /// Index of the last completed epoch.
    pub epoch: usize,
    pub schema_fingerprint: String,
    /// Fine-loss scale frozen for the run.
    pub scale: f64,
    pub layer_dim: usize,
    pub fg_labels: usize,
    pub cg_labels: usize,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            schema_fingerprint: self.schema_fingerprint.clone(),
            scale: self.scale,
            layer_dim: self.layer_dim,
            fg_labels: self.fg_labels,
            cg_labels: self.cg_labels,
            tensors: layout(&self.params)
                .into_iter()
                .map(|(name, len)| TensorEntry { name, len })
                .collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for v in flatten(&self.params) {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 4];
        input
            .read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
        }
        header.config.validate()?;
        let mut params = ModelParams::<T>::init(
            &header.config.head,
            header.layer_dim,
            header.fg_labels,
            header.cg_labels,
            0,
        )?;
        let expected: Vec<TensorEntry> = layout(&params)
            .into_iter()
            .map(|(name, len)| TensorEntry { name, len })
            .collect();
        if expected != header.tensors {
            return Err(Error::Checkpoint("tensor layout does not match the stored config".into()));
        }
        let total: usize = expected.iter().map(|t| t.len).sum();
        let mut values = Vec::with_capacity(total);
        let mut buf = [0u8; 8];
        for _ in 0..total {
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::Checkpoint("non-finite parameter".into()));
            }
            values.push(T::of(v));
        }
        if input.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        assign(&mut params, &values);
        Ok(Self {
            config: header.config,
            params,
            epoch: header.epoch,
            schema_fingerprint: header.schema_fingerprint,
            scale: header.scale,
            layer_dim: header.layer_dim,
            fg_labels: header.fg_labels,
            cg_labels: header.cg_labels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
