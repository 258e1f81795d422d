//! Parameter checkpoints.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "UVCKPT\0\0"
//! version  u32      1
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32, name (utf-8), rows u64, cols u64, rows*cols f64 (row-major)
//! ```
//!
//! A JSON manifest next to the binary records the network channel lists, the
//! RNG seed and the iteration the snapshot was taken at.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"UVCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub seed: u64,
    pub iteration: usize,
    pub networks: BTreeMap<String, Vec<usize>>,
    pub tensors: Vec<String>,
}

pub fn write_tensors(out: &mut impl Write, store: &ParamStore) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for t in store.iter() {
        let name = t.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(t.data.nrows() as u64).to_le_bytes())?;
        out.write_all(&(t.data.ncols() as u64).to_le_bytes())?;
        for x in t.data.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(input: &mut impl Read) -> Result<Vec<(String, Array2<f64>)>> {
    let bad = |m: &str| Error::Argument(format!("checkpoint: {m}"));
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > buf.len() {
            return Err(bad("truncated"));
        }
        at += n;
        Ok(&buf[at - n..at])
    };
    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not utf-8"))?;
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| bad("size overflow"))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Array2::from_shape_vec((rows, cols), data).expect("length checked")));
    }
    Ok(out)
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_checkpoint(dir: &Path, stem: &str, store: &ParamStore, manifest: &CheckpointManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(format!("{stem}.bin"));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?);
    write_tensors(&mut f, store).map_err(|e| Error::io(&bin, e))?;
    f.flush().map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(Vec<(String, Array2<f64>)>, CheckpointManifest)> {
    let bin = dir.join(format!("{stem}.bin"));
    let mut f = std::fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?;
    let tensors = read_tensors(&mut f)?;
    let json = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    Ok((tensors, serde_json::from_str(&text)?))
}

/// Copies checkpointed tensors into a store by name; every store tensor must be present.
pub fn restore_into(store: &mut ParamStore, tensors: &[(String, Array2<f64>)]) -> Result<()> {
    let by_name: BTreeMap<&str, &Array2<f64>> = tensors.iter().map(|(n, a)| (n.as_str(), a)).collect();
    for t in store.iter_mut() {
        let src = by_name
            .get(t.name.as_str())
            .ok_or_else(|| Error::Argument(format!("checkpoint lacks tensor {}", t.name)))?;
        if src.dim() != t.data.dim() {
            return Err(Error::Shape(format!("checkpoint tensor {} has shape {:?}", t.name, src.dim())));
        }
        t.data.assign(src);
    }
    Ok(())
}
