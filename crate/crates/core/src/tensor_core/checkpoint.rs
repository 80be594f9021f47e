//! Binary checkpoint format.
//!
//! ```text
//! magic      4 bytes  "UGTN"
//! version    u32 LE
//! count      u32 LE
//! per tensor:
//!   name_len u16 LE, name (UTF-8)
//!   rank     u8
//!   extents  rank x u64 LE
//!   values   product(extents) x f32 LE
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UGTN";
pub const VERSION: u32 = 1;

/// Serialize named tensors. Values are stored as 32-bit floats.
pub fn encode<T: Scalar>(tensors: &[(String, Tensor<T>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::InvalidArgument("too many tensors for checkpoint".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::InvalidArgument(format!("tensor rank too large: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            detail: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bad(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

pub fn decode<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path: origin,
    };
    if cur.take(4)? != MAGIC {
        return Err(cur.bad("bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(cur.bad(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| cur.bad("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(cur.u64()?).map_err(|_| cur.bad("extent overflow"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| cur.bad("element count overflow"))?;
        let raw = cur.take(numel.checked_mul(4).ok_or_else(|| cur.bad("size overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(cur.bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save<T: Scalar>(path: &Path, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let bytes = encode(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
