//! Model container: `DCPL` magic, u32 LE version, u64 LE header length, a
//! UTF-8 JSON header `{config, tensors: {name: {shape, offset}}}`, then the
//! tensors as row-major little-endian f64, concatenated. Offsets are in
//! bytes from the start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::{Model, TensorRef};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCPL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// Serializes a model into container bytes.
pub fn to_bytes(model: &Model<f64>) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    let mut payload = Vec::new();
    for (name, t) in model.tensors() {
        let shape = t.shape();
        tensors.insert(
            name,
            TensorEntry {
                shape,
                offset: payload.len() as u64,
            },
        );
        let data = match t {
            TensorRef::Vector(v) => v.as_slice().expect("contiguous"),
            TensorRef::Matrix(m) => m.as_slice().expect("standard layout"),
        };
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&ContainerHeader {
        config: model.config.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits container bytes into header and payload without validating tensors.
pub fn read_header(bytes: &[u8]) -> Result<(ContainerHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::MalformedContainer("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::MalformedContainer(format!(
            "unsupported version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16usize
        .checked_add(usize::try_from(header_len).unwrap_or(usize::MAX))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::MalformedContainer("header length exceeds file".into()))?;
    let header: ContainerHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::MalformedContainer(format!("header: {e}")))?;
    Ok((header, &bytes[header_end..]))
}

/// Parses and validates container bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Model<f64>> {
    let (header, payload) = read_header(bytes)?;
    let mut model = Model::<f64>::zeros(header.config)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    if let Some(extra) = header
        .tensors
        .keys()
        .find(|k| !expected.iter().any(|(n, _)| n == *k))
    {
        return Err(Error::MalformedContainer(format!("unexpected tensor `{extra}`")));
    }
    for ((name, mut dst), (_, shape)) in model.tensors_mut().into_iter().zip(&expected) {
        let entry = header
            .tensors
            .get(&name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if &entry.shape != shape {
            return Err(Error::ShapeMismatch {
                name,
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let dst = dst.as_mut_slice();
        let start = usize::try_from(entry.offset).unwrap_or(usize::MAX);
        let end = start
            .checked_add(dst.len() * 8)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| {
                Error::MalformedContainer(format!("payload of `{name}` runs past end of file"))
            })?;
        for (v, chunk) in dst.iter_mut().zip(payload[start..end].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        if dst.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTensor(name));
        }
    }
    Ok(model)
}

pub fn save_model(model: &Model<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
