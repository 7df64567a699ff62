//! Flat binary model container.
//!
//! All integers and floats are little-endian:
//!
//! | field            | type                                        |
//! |------------------|---------------------------------------------|
//! | magic            | 4 bytes, `SBFC`                             |
//! | version          | `u32`, currently 1                          |
//! | kind             | `u32`: 1 embedding, 2 kernel, 3 SBF-Net     |
//! | descriptor       | `u32` byte length, then UTF-8 JSON          |
//! | tensor count     | `u32`                                       |
//! | each tensor      | `u32` rank, `rank x u64` dims, `f64` values |

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SBFC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Embedding = 1,
    Kernel = 2,
    SbfNet = 3,
}

impl Kind {
    fn from_u32(v: u32) -> Option<Kind> {
        match v {
            1 => Some(Kind::Embedding),
            2 => Some(Kind::Kernel),
            3 => Some(Kind::SbfNet),
            _ => None,
        }
    }
}

pub fn encode(kind: Kind, descriptor: &Value, tensors: &[Tensor]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(descriptor)?;
    let payload: usize = tensors.iter().map(|t| 4 + 8 * t.shape().len() + 8 * t.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Container(format!(
                "truncated at byte {}: wanted {n} more",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], expected: Kind) -> Result<(Value, Vec<Tensor>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let raw_kind = c.u32()?;
    let kind = Kind::from_u32(raw_kind)
        .ok_or_else(|| Error::Container(format!("unknown kind {raw_kind}")))?;
    if kind != expected {
        return Err(Error::Container(format!(
            "expected a {expected:?} container, found {kind:?}"
        )));
    }
    let len = c.u32()? as usize;
    let descriptor = serde_json::from_slice(c.take(len)?)?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Container("tensor size overflow".into()))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Container("tensor size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Container(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok((descriptor, tensors))
}

pub fn write_file(path: impl AsRef<Path>, kind: Kind, descriptor: &Value, tensors: &[Tensor]) -> Result<()> {
    fs::write(path, encode(kind, descriptor, tensors)?)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>, expected: Kind) -> Result<(Value, Vec<Tensor>)> {
    decode(&fs::read(path)?, expected)
}
