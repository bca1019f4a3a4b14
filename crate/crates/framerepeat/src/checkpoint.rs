//! Scorer checkpoints: one JSON header line followed by the tensors as
//! little-endian `f32`, concatenated in canonical order.
//!
//! Parameters are held as `f64` in memory and narrowed on save, so a
//! checkpoint reproduces [`narrow_to_f32`] of the saved parameters exactly.

use std::fs;
use std::path::Path;

use framerepeat_core::numerics::DenseArray;
use framerepeat_core::scorer::{count_params, ScorerConfig, ScorerParams, PARAM_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample_io::{decode_f32, encode_f32};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorIndex {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: ScorerConfig,
    pub n_params: usize,
    pub tensors: Vec<TensorIndex>,
}

/// Rounds every parameter to the nearest `f32`.
pub fn narrow_to_f32(params: &ScorerParams) -> ScorerParams {
    let mut out = params.clone();
    for t in out.tensors_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
    out
}

pub fn encode_checkpoint(params: &ScorerParams, config: &ScorerConfig) -> Vec<u8> {
    let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
    let mut offset = 0u64;
    for (t, name) in params.tensors().iter().zip(PARAM_NAMES) {
        tensors.push(TensorIndex {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len() as u64,
        });
        offset += 4 * t.len() as u64;
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        n_params: params.count(),
        tensors,
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    for t in params.tensors() {
        bytes.extend(encode_f32(t.data()));
    }
    bytes
}

pub fn save_checkpoint(params: &ScorerParams, config: &ScorerConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    crate::records::write_atomic(path, &encode_checkpoint(params, config))
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(ScorerParams, ScorerConfig)> {
    let corrupt = |m: String| Error::format(path, m);
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("no header line".into()))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[..split]).map_err(|e| corrupt(format!("header: {e}")))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => return Err(corrupt(format!("unsupported checkpoint version {v}"))),
        None => return Err(corrupt("header lacks format_version".into())),
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(format!("header: {e}")))?;
    header.config.validate()?;
    let expected = count_params(&header.config);
    if header.n_params != expected {
        return Err(corrupt(format!(
            "header declares {} parameters, config implies {expected}",
            header.n_params
        )));
    }
    let blob = &bytes[split + 1..];
    if blob.len() as u64 != 4 * expected as u64 {
        return Err(corrupt(format!(
            "tensor section has {} bytes, expected {}",
            blob.len(),
            4 * expected
        )));
    }
    if header.tensors.len() != PARAM_NAMES.len() {
        return Err(corrupt(format!("{} tensors indexed", header.tensors.len())));
    }
    let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
    for (entry, name) in header.tensors.iter().zip(PARAM_NAMES) {
        if entry.name != name {
            return Err(corrupt(format!("tensor {} found where {name} belongs", entry.name)));
        }
        let len = entry.shape.iter().product::<usize>();
        let start = entry.offset as usize;
        let end = start + 4 * len;
        if entry.len as usize != len || end > blob.len() {
            return Err(corrupt(format!("tensor {name} extends past the blob")));
        }
        let t = DenseArray::new(entry.shape.clone(), decode_f32(&blob[start..end]))
            .map_err(|e| corrupt(format!("{name}: {e}")))?;
        tensors.push(t);
    }
    let params = ScorerParams::from_tensors(&header.config, tensors).map_err(|e| corrupt(e.to_string()))?;
    Ok((params, header.config))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ScorerParams, ScorerConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
