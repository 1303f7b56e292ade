//! Binary checkpoint format shared by the encoder and the temporal model.
//!
//! Layout (little-endian): magic `CCMXCKPT`, `u32` version, `u64` record
//! count, then per record `u32` name length, UTF-8 name, `u32` rank, `u64`
//! per dimension and the row-major `f64` values. Records whose name starts
//! with `meta.` carry markers rather than parameters.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CCMXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet) -> Self {
        Self { records: params.to_named() }
    }

    /// Adds a `meta.<name>` marker record.
    pub fn with_marker(mut self, name: &str) -> Self {
        self.records.push((format!("{META_PREFIX}{name}"), Tensor::vector(vec![1.0])));
        self
    }

    pub fn has_marker(&self, name: &str) -> bool {
        let full = format!("{META_PREFIX}{name}");
        self.records.iter().any(|(n, _)| *n == full)
    }

    /// Copies parameter records into `params`; names and shapes must match.
    pub fn load_into(&self, params: &mut ParamSet) -> Result<()> {
        let tensors: Vec<(String, Tensor)> =
            self.records.iter().filter(|(n, _)| !n.starts_with(META_PREFIX)).cloned().collect();
        params.load_named(&tensors)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (name, t) in &self.records {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
            let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {pos}")))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, supported: CHECKPOINT_VERSION });
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut records = Vec::new();
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
            let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
                shape.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            let data = take(numel)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            records.push((name, Tensor::new(shape, data)?));
        }
        if take(1).is_ok() {
            return Err(Error::Format("trailing bytes after last checkpoint record".into()));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
        Self::decode(&bytes)
    }
}
