//! Flat binary tensor file.
//!
//! ```text
//! magic    4 bytes   "VPFW"
//! version  u32 LE    1
//! count    u32 LE    number of tensors
//! repeated count times:
//!   name_len u32 LE, name (UTF-8, name_len bytes)
//!   rows u32 LE, cols u32 LE
//!   rows * cols f64 LE, row-major
//! ```
//! Vectors are stored with `cols = 1`.

use crate::error::{Error, Result};

pub const WEIGHT_FILE_MAGIC: &[u8; 4] = b"VPFW";
pub const WEIGHT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn write_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_FILE_MAGIC);
    out.extend_from_slice(&WEIGHT_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::malformed("weight file", format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != WEIGHT_FILE_MAGIC {
        return Err(Error::malformed("weight file", "bad magic"));
    }
    let version = r.u32()?;
    if version != WEIGHT_FILE_VERSION {
        return Err(Error::malformed("weight file", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::malformed("weight file", format!("tensor name: {e}")))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::malformed("weight file", "tensor too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::malformed("weight file", "tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor { name, rows, cols, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::malformed("weight file", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}
