//! Parameter container: a binary payload plus a JSON manifest.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic  b"PNCK"
//! u32    format version
//! u32    entry count
//! entry* u32 name length, UTF-8 name, u32 rank, u64 dims[rank], f64 values[prod(dims)]
//! ```
//!
//! Entries are written in name order, so identical parameters produce
//! identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::array::NumArray;
use super::params::Params;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON sidecar describing a container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub parameters: Vec<ParamEntry>,
    pub hyperparameters: serde_json::Value,
}

pub fn encode(params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, arr) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(arr.shape().len() as u32).to_le_bytes());
        for &d in arr.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in arr.data() {
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated container".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Params> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let arr = NumArray::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
        params.insert(name, arr);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(params)
}

pub fn manifest_for(params: &Params, hyperparameters: serde_json::Value) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        parameters: params
            .iter()
            .map(|(name, a)| ParamEntry {
                name: name.clone(),
                shape: a.shape().to_vec(),
            })
            .collect(),
        hyperparameters,
    }
}

/// Paths of the binary container and its manifest for a given stem.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("ckpt"), stem.with_extension("json"))
}

pub fn save(stem: &Path, params: &Params, hyperparameters: serde_json::Value) -> Result<()> {
    let (bin, json) = paths(stem);
    fs::write(&bin, encode(params)).map_err(|e| Error::io(&bin, e))?;
    let manifest = manifest_for(params, hyperparameters);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

/// Loads a container and checks it against its manifest.
pub fn load(stem: &Path) -> Result<(Params, Manifest)> {
    let (bin, json) = paths(stem);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let params = decode(&bytes)?;
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "manifest format version {} != {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    let listed = manifest_for(&params, serde_json::Value::Null).parameters;
    if listed != manifest.parameters {
        return Err(Error::Checkpoint(
            "manifest parameter list does not match container".into(),
        ));
    }
    Ok((params, manifest))
}
