//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "M2MIL\0"                      6 bytes
//! version                         u16 (= 1)
//! config_len                      u32
//! config                          config_len bytes of UTF-8 JSON
//! tensor_count                    u32
//! repeated tensor_count times:
//!   name_len                      u32
//!   name                          name_len bytes of UTF-8
//!   rows, cols                    u32, u32
//!   data                          rows·cols f64, row-major
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::config::ModelConfig;
use super::mil::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Parameters;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"M2MIL\0";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Config(e.to_string()))?;
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn read_checkpoint(bytes: &[u8], origin: &Path) -> Result<(ModelConfig, ModelParams)> {
    let malformed = |detail: String| Error::Malformed {
        path: origin.into(),
        what: "checkpoint",
        detail,
    };
    let mut cur = Cursor::new(bytes);
    let mut take = |n: usize| -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        cur.read_exact(&mut b)
            .map_err(|_| malformed(format!("truncated while reading {n} bytes")))?;
        Ok(b)
    };
    if take(6)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: origin.into(),
            expected: "M2MIL\\0",
        });
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: origin.into(),
            version,
        });
    }
    let read_u32 = |take: &mut dyn FnMut(usize) -> Result<Vec<u8>>| -> Result<usize> {
        Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize)
    };
    let len = read_u32(&mut take)?;
    let cfg: ModelConfig =
        serde_json::from_slice(&take(len)?).map_err(|e| malformed(format!("config: {e}")))?;
    let mut params = ModelParams::zeros(&cfg)?;
    let count = read_u32(&mut take)?;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(malformed(format!(
            "{count} tensors stored, config implies {}",
            slots.len()
        )));
    }
    for (name, slot) in slots.iter_mut() {
        let n = read_u32(&mut take)?;
        let stored = String::from_utf8(take(n)?)
            .map_err(|_| malformed("tensor name is not UTF-8".into()))?;
        if &stored != name {
            return Err(malformed(format!("expected tensor {name}, found {stored}")));
        }
        let rows = read_u32(&mut take)?;
        let cols = read_u32(&mut take)?;
        if (rows, cols) != slot.shape() {
            return Err(malformed(format!(
                "tensor {name} is {rows}x{cols}, expected {}",
                slot.shape_str()
            )));
        }
        let raw = take(rows * cols * 8)?;
        for (dst, c) in slot.as_mut_slice().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(c.try_into().unwrap());
        }
    }
    drop(slots);
    if (cur.position() as usize) != bytes.len() {
        return Err(malformed("trailing bytes after last tensor".into()));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    fs::write(path, write_checkpoint(cfg, params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    if !path.is_file() {
        return Err(Error::MissingFile { path: path.into() });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
