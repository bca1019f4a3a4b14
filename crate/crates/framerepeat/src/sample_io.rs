//! Sample directories: `manifest.json` plus raw little-endian `f32` blobs.
//!
//! ```text
//! <dir>/manifest.json   {format_version, sample_id, n_frames, n_tokens, dim,
//!                        n_options, answer_id, blobs: {frames, tokens, pooled, sims}}
//! <dir>/frames.f32      n_frames × dim, row-major
//! <dir>/tokens.f32      n_tokens × dim, row-major
//! <dir>/pooled.f32      dim
//! <dir>/sims.f32        n_frames
//! ```
//!
//! Values are widened to `f64` on load and narrowed to `f32` on save, so a
//! record whose values are all `f32`-representable round-trips bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use framerepeat_core::features::{FrameFeatureSet, QuestionEncoding, SampleRecord};
use framerepeat_core::numerics::DenseArray;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LoadError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobNames {
    pub frames: String,
    pub tokens: String,
    pub pooled: String,
    pub sims: String,
}

impl Default for BlobNames {
    fn default() -> Self {
        BlobNames {
            frames: "frames.f32".into(),
            tokens: "tokens.f32".into(),
            pooled: "pooled.f32".into(),
            sims: "sims.f32".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub sample_id: String,
    pub n_frames: usize,
    pub n_tokens: usize,
    pub dim: usize,
    pub n_options: usize,
    pub answer_id: usize,
    pub blobs: BlobNames,
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

fn read_blob(dir: &Path, name: &str, count: usize) -> std::result::Result<(PathBuf, Vec<f64>), LoadError> {
    if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
        return Err(LoadError::Manifest {
            path: dir.join(MANIFEST),
            reason: format!("blob name {name:?} must be a plain sibling file name"),
        });
    }
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|_| LoadError::Missing(path.clone()))?;
    let expected = 4 * count as u64;
    if bytes.len() as u64 != expected {
        return Err(LoadError::ByteLength {
            blob: path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values = decode_f32(&bytes);
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(LoadError::NonFinite { blob: path, index });
    }
    Ok((path, values))
}

pub fn read_manifest(path: &Path) -> std::result::Result<Manifest, LoadError> {
    let text = fs::read_to_string(path).map_err(|_| LoadError::Missing(path.to_path_buf()))?;
    let bad = |reason: String| LoadError::Manifest { path: path.to_path_buf(), reason };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(LoadError::Version {
                path: path.to_path_buf(),
                found: v as u32,
            })
        }
        None => return Err(bad("missing format_version".into())),
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    if m.n_frames < 1 || m.n_tokens < 1 || m.dim < 2 {
        return Err(bad(format!(
            "extents n_frames={} n_tokens={} dim={} must be >= 1, >= 1, >= 2",
            m.n_frames, m.n_tokens, m.dim
        )));
    }
    Ok(m)
}

/// Loads and validates a sample from its manifest path (or its directory).
pub fn load_sample(path: impl AsRef<Path>) -> std::result::Result<SampleRecord, LoadError> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let m = read_manifest(&manifest_path)?;
    let (_, frames) = read_blob(&dir, &m.blobs.frames, m.n_frames * m.dim)?;
    let (_, tokens) = read_blob(&dir, &m.blobs.tokens, m.n_tokens * m.dim)?;
    let (_, pooled) = read_blob(&dir, &m.blobs.pooled, m.dim)?;
    let (sims_path, sims) = read_blob(&dir, &m.blobs.sims, m.n_frames)?;
    if let Some((index, &value)) = sims.iter().enumerate().find(|(_, s)| s.abs() > 1.0) {
        return Err(LoadError::SimilarityRange { blob: sims_path, index, value });
    }
    let invariant = |source| LoadError::Invariant { path: manifest_path.clone(), source };
    let frames = DenseArray::matrix(m.n_frames, m.dim, frames).map_err(invariant)?;
    let tokens = DenseArray::matrix(m.n_tokens, m.dim, tokens).map_err(invariant)?;
    let record = SampleRecord::new(
        m.sample_id,
        FrameFeatureSet::new(frames, sims).map_err(invariant)?,
        QuestionEncoding::new(tokens, pooled).map_err(invariant)?,
        m.answer_id,
        m.n_options,
    )
    .map_err(invariant)?;
    record.check_similarities().map_err(invariant)?;
    Ok(record)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `record` into `dir` (created if needed); returns the manifest path.
/// Output bytes depend only on the record.
pub fn save_sample(record: &SampleRecord, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blobs = BlobNames::default();
    let m = Manifest {
        format_version: FORMAT_VERSION,
        sample_id: record.sample_id.clone(),
        n_frames: record.n_frames(),
        n_tokens: record.question.n_tokens(),
        dim: record.dim(),
        n_options: record.n_options,
        answer_id: record.answer_id,
        blobs: blobs.clone(),
    };
    write(&dir.join(&blobs.frames), &encode_f32(record.features.frames().data()))?;
    write(&dir.join(&blobs.tokens), &encode_f32(record.question.tokens().data()))?;
    write(&dir.join(&blobs.pooled), &encode_f32(record.question.pooled()))?;
    write(&dir.join(&blobs.sims), &encode_f32(record.features.sims()))?;
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    write(&path, text.as_bytes())?;
    Ok(path)
}

/// Sample ids double as directory and file names.
pub fn check_sample_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "sample id {id:?} must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}
