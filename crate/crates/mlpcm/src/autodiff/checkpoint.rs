//! Weight checkpoint container (magic `MLWT`).
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MLWT"  version:u16  flags:u16
//! manifest_len:u32  manifest (JSON, describes the architecture)
//! seed:u64  tensor_count:u32
//! repeat: name_len:u16 name  ndim:u8 dims:u32*ndim  data:f32*numel
//! crc32:u32 over every preceding byte
//! ```
//!
//! Tensor order is the parameter store's insertion order, so identical
//! models always serialize identically.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};
use crate::math::crc32;

const MAGIC: &[u8; 4] = b"MLWT";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checksum mismatch; file is corrupt")]
    BadCrc,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    manifest_json: &str,
    seed: u64,
) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u16(0);
    w.u32(manifest_json.len() as u32);
    w.buf.extend_from_slice(manifest_json.as_bytes());
    w.u64(seed);
    w.u32(store.len() as u32);
    for (_, name, t) in store.iter() {
        w.u16(name.len() as u16);
        w.buf.extend_from_slice(name.as_bytes());
        w.buf.push(4);
        for d in t.shape {
            w.u32(d as u32);
        }
        for &v in &t.data {
            w.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&w.buf);
    w.u32(crc);
    fs::write(path, &w.buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::Malformed("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Returns the parameters, the architecture manifest JSON, and the training
/// seed the checkpoint was produced with.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, String, u64)> {
    let data = fs::read(path)?;
    if data.len() < 4 + 2 + 2 + 4 || &data[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body_len = data.len() - 4;
    let stored_crc = u32::from_le_bytes(data[body_len..].try_into().unwrap());
    if crc32(&data[..body_len]) != stored_crc {
        return Err(CheckpointError::BadCrc);
    }
    let mut r = Reader { data: &data[..body_len], pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let _flags = r.u16()?;
    let mlen = r.u32()? as usize;
    let manifest = String::from_utf8(r.take(mlen)?.to_vec())
        .map_err(|_| CheckpointError::Malformed("manifest is not UTF-8".into()))?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let ndim = r.take(1)?[0] as usize;
        if ndim != 4 {
            return Err(CheckpointError::Malformed(format!("tensor {name} has rank {ndim}")));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let numel: usize = shape.iter().product();
        if numel > (1 << 28) {
            return Err(CheckpointError::Malformed(format!("tensor {name} is implausibly large")));
        }
        let bytes = r.take(numel * 4)?;
        let dataf: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(&name, Tensor::from_vec(shape, dataf));
    }
    if r.pos != body_len {
        return Err(CheckpointError::Malformed("trailing bytes after tensors".into()));
    }
    Ok((store, manifest, seed))
}
