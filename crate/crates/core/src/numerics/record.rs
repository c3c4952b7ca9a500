//! Binary tensor records, shared by tensor files and checkpoints.
//!
//! Layout (all little-endian): name length `u32`, UTF-8 name bytes, dtype
//! `u8` (0 = f64), rank `u32`, one `u64` per dim, then the raw payload.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DTYPE_F64: u8 = 0;

const MAX_NAME_LEN: u32 = 1 << 16;
const MAX_RANK: u32 = 16;

pub fn write_tensor_record<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    let name_len = u32::try_from(name.len())
        .ok()
        .filter(|&n| n <= MAX_NAME_LEN)
        .ok_or_else(|| Error::Format(format!("tensor name too long ({} bytes)", name.len())))?;
    w.write_all(&name_len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[DTYPE_F64])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_NAME_LEN {
        return Err(Error::Format(format!("name length {len} exceeds limit")));
    }
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("name is not UTF-8: {e}")))
}

pub(crate) fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_tensor_record<R: Read>(r: &mut R) -> Result<(String, Tensor)> {
    let name = read_string(r)?;
    let dtype = read_u8(r)?;
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype code {dtype} for `{name}`")));
    }
    let rank = read_u32(r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported rank {rank} for `{name}`")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut b8 = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut b8)?;
        let d = usize::try_from(u64::from_le_bytes(b8))
            .map_err(|_| Error::Format("dimension overflows usize".into()))?;
        shape.push(d);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let mut payload = vec![0u8; n * 8];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
    Ok((name, t))
}

pub fn save_tensor_file(path: &std::path::Path, name: &str, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor_record(&mut buf, name, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor_file(path: &std::path::Path) -> Result<(String, Tensor)> {
    let bytes = std::fs::read(path)?;
    let mut cursor = bytes.as_slice();
    read_tensor_record(&mut cursor)
}
