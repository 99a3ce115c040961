//! `HMV1` parameter checkpoints: the magic bytes followed by one record per
//! parameter, all integers little-endian:
//!
//! ```text
//! u32 name_len | name bytes (UTF-8) | u32 axis_count | u64 axis * axis_count | f64 value * product(axes)
//! ```
//!
//! Records run to end of file.

use std::fs;
use std::path::Path;

use super::{NumericsError, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HMV1";

pub fn write_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + params.scalar_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &axis in t.shape() {
            out.extend_from_slice(&(axis as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ParamSet, NumericsError> {
    let bad = |msg: &str| NumericsError::Checkpoint(msg.to_string());
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing HMV1 magic"));
    }
    let mut cursor = Cursor { bytes, pos: 4 };
    let mut params = ParamSet::new();
    while cursor.pos < bytes.len() {
        let name_len = cursor.u32()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_string();
        let axes = cursor.u32()? as usize;
        if axes > 4 {
            return Err(bad("more than 4 axes"));
        }
        let shape = (0..axes)
            .map(|_| cursor.u64().map(|a| a as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let raw = cursor.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<(), NumericsError> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet, NumericsError> {
    read_checkpoint(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NumericsError::Checkpoint("truncated record".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NumericsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
