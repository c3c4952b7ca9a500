//! `IPQA` checkpoint files.
//!
//! Layout (little-endian): magic `IPQA`, version `u32`, group count `u32`,
//! then per group its name (`u32` length + UTF-8), frozen flag `u8`, tensor
//! count `u32` and that many tensor records.

use std::io::{Read, Write};
use std::path::Path;

use super::state::{ModelState, ParamGroup};
use crate::error::{Error, Result};
use crate::numerics::record::{read_string, read_tensor_record, read_u32, read_u8, write_string, write_tensor_record};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IPQA";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, state: &ModelState) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(state.groups().len() as u32).to_le_bytes())?;
    for group in state.groups() {
        write_string(w, &group.name)?;
        w.write_all(&[u8::from(group.frozen)])?;
        w.write_all(&(group.params.len() as u32).to_le_bytes())?;
        for (name, t) in &group.params {
            write_tensor_record(w, name, t)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelState> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_groups = read_u32(r)?;
    let mut groups = Vec::with_capacity(n_groups.min(64) as usize);
    for _ in 0..n_groups {
        let name = read_string(r)?;
        let frozen = match read_u8(r)? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad frozen flag {other} in `{name}`"))),
        };
        let n = read_u32(r)?;
        let params = (0..n)
            .map(|_| read_tensor_record(r))
            .collect::<Result<Vec<_>>>()?;
        groups.push(ParamGroup { name, frozen, params });
    }
    ModelState::from_groups(groups)
}

impl ModelState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, self).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let state = read_checkpoint(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", cursor.len())));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
