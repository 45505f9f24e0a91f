//! Flat named-tensor archive.
//!
//! Layout: the 8-byte magic `MMPTARC1`, a little-endian `u64` manifest length,
//! the JSON manifest, then every tensor's f64 values little-endian, back to
//! back. Manifest entries carry `name`, `shape`, `dtype` and the byte `offset`
//! relative to the start of the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMPTARC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub fn encode_archive(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::shape(&t.shape, t.data.len()));
        }
        manifest.push(ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f64".into(),
            offset,
        });
        offset += 8 * t.data.len() as u64;
    }
    let header = serde_json::to_vec(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not a tensor archive (bad magic or truncated header)".into());
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or("truncated manifest")?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(&bytes[16..data_start]).map_err(|e| format!("malformed manifest: {e}"))?;
    let data = &bytes[data_start..];
    let mut out = Vec::with_capacity(manifest.len());
    let mut expected_offset = 0u64;
    for entry in manifest {
        if entry.dtype != "f64" {
            return Err(format!("tensor {} has unsupported dtype {}", entry.name, entry.dtype));
        }
        if entry.offset != expected_offset {
            return Err(format!("tensor {} has offset {} (expected {expected_offset})", entry.name, entry.offset));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * n;
        if end > data.len() {
            return Err(format!("truncated data for tensor {}", entry.name));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        expected_offset = end as u64;
        out.push(NamedTensor::new(entry.name, entry.shape, values));
    }
    if expected_offset as usize != data.len() {
        return Err(format!("{} trailing bytes after the last tensor", data.len() - expected_offset as usize));
    }
    Ok(out)
}

pub fn write_archive(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode_archive(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

/// Checks `tensors` against `specs` in order; names the first mismatch.
pub fn verify_manifest(specs: &[ParamSpec], tensors: &[NamedTensor]) -> std::result::Result<(), String> {
    for (i, spec) in specs.iter().enumerate() {
        match tensors.get(i) {
            None => return Err(format!("missing tensor {} {:?}", spec.name, spec.shape)),
            Some(t) if t.name != spec.name => {
                return Err(format!("tensor #{i}: expected {} {:?}, found {} {:?}", spec.name, spec.shape, t.name, t.shape))
            }
            Some(t) if t.shape != spec.shape => {
                return Err(format!("tensor {}: expected shape {:?}, found {:?}", spec.name, spec.shape, t.shape))
            }
            Some(_) => {}
        }
    }
    if tensors.len() > specs.len() {
        return Err(format!("unexpected extra tensor {}", tensors[specs.len()].name));
    }
    Ok(())
}
