//! Binary checkpoint: `"CLAB"`, format version (u32), then per parameter
//! name length (u32) + UTF-8 name, rank (u32), dims (u32 each), and the
//! param / mean-square / momentum arrays as little-endian f32. Records run
//! to end of file.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::optim::{ParamEntry, ParamStore};
use super::Tensor;

pub const MAGIC: &[u8; 4] = b"CLAB";

/// Bumped whenever a network architecture or the layout changes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {offset} (length {len})")]
    Truncated { offset: usize, len: usize },
    #[error("checkpoint parameter name is not UTF-8")]
    BadName,
    #[error("checkpoint parameter {0:?} has an invalid shape")]
    BadShape(String),
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.numel() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, entry) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = entry.param.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for arr in [entry.param.data(), &entry.mean_square[..], &entry.momentum[..]] {
            for v in arr {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { offset: self.pos, len: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated { offset: self.pos, len: self.bytes.len() })?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let mut store = ParamStore::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| CheckpointError::BadName)?.to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.filter(|_| rank > 0).ok_or_else(|| CheckpointError::BadShape(name.clone()))?;
        let param = r.f32s(numel)?;
        let mean_square = r.f32s(numel)?;
        let momentum = r.f32s(numel)?;
        let param = Tensor::new(&shape, param).map_err(|_| CheckpointError::BadShape(name.clone()))?;
        store.insert_entry(name, ParamEntry { param, mean_square, momentum });
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore, CheckpointError> {
    decode(&fs::read(path)?)
}
