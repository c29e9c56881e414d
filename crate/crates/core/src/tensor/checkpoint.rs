//! Flat archive of named arrays.
//!
//! Layout, all integers little-endian:
//!   version string `UVFORGE-CKPT-1` (u16 length + UTF-8 bytes)
//!   manifest JSON (u32 length + UTF-8 bytes)
//!   entry count (u32), then per entry:
//!     name (u16 length + UTF-8), dtype tag (u8), rank (u8),
//!     extents (u32 each), payload (little-endian scalars)

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const CKPT_VERSION: &str = "UVFORGE-CKPT-1";

/// Named arrays plus a free-form manifest describing which modules
/// (backbone, psi_a, psi_s, variants) the entries belong to.
pub struct Checkpoint<T> {
    pub manifest: String,
    pub entries: BTreeMap<String, Tensor<T>>,
}

pub fn write_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(CKPT_VERSION.len() as u16).to_le_bytes());
    buf.extend_from_slice(CKPT_VERSION.as_bytes());
    buf.extend_from_slice(&(ckpt.manifest.len() as u32).to_le_bytes());
    buf.extend_from_slice(ckpt.manifest.as_bytes());
    buf.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.entries {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(T::DTYPE_TAG);
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn utf8(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format {
            what: "checkpoint",
            msg: "invalid UTF-8".into(),
        })
    }
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &raw, pos: 0 };
    let vlen = r.u16()? as usize;
    let version = r.utf8(vlen)?;
    if version != CKPT_VERSION {
        return Err(Error::Format {
            what: "checkpoint",
            msg: format!("version `{version}`, expected `{CKPT_VERSION}`"),
        });
    }
    let mlen = r.u32()? as usize;
    let manifest = r.utf8(mlen)?;
    let count = r.u32()? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = r.utf8(nlen)?;
        let dtype = r.u8()?;
        if dtype != T::DTYPE_TAG {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("entry `{name}` dtype tag {dtype}, expected {}", T::DTYPE_TAG),
            });
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * T::BYTE_WIDTH)?;
        let data: Vec<T> = payload
            .chunks_exact(T::BYTE_WIDTH)
            .map(|c| T::read_le(c))
            .collect();
        entries.insert(name, Tensor::new(shape, data)?);
    }
    Ok(Checkpoint { manifest, entries })
}
