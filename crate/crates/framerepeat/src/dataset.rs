//! Dataset directories.
//!
//! ```text
//! <root>/index.json          {format_version, samples: [ids], synthetic?: spec}
//! <root>/samples/<id>/       one sample directory each
//! <root>/truth/<id>.json     planted gains, synthetic datasets only
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use framerepeat_core::features::SampleRecord;
use framerepeat_core::synthetic::{generate_synthetic_dataset, SyntheticOracle, SyntheticSpec, SyntheticTruth};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::write_atomic;
use crate::sample_io::{check_sample_id, load_sample, save_sample, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub samples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    pub index: DatasetIndex,
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(value).expect("serializable");
    b.push(b'\n');
    b
}

/// Writes a synthetic dataset with truth sidecars under `root`.
pub fn write_synthetic(root: impl AsRef<Path>, spec: &SyntheticSpec, n_samples: usize) -> Result<Dataset> {
    let root = root.as_ref();
    let samples = generate_synthetic_dataset(spec, n_samples)?;
    let truth_dir = root.join("truth");
    fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;
    let mut ids = Vec::with_capacity(samples.len());
    for s in &samples {
        let id = &s.record.sample_id;
        check_sample_id(id)?;
        save_sample(&s.record, root.join("samples").join(id))?;
        write_atomic(&truth_dir.join(format!("{id}.json")), &pretty(&s.truth))?;
        ids.push(id.clone());
    }
    let index = DatasetIndex {
        format_version: FORMAT_VERSION,
        samples: ids,
        synthetic: Some(spec.clone()),
    };
    write_atomic(&root.join("index.json"), &pretty(&index))?;
    Ok(Dataset { root: root.to_path_buf(), index })
}

/// Writes an index over already-saved sample directories.
pub fn write_index(root: impl AsRef<Path>, samples: &[SampleRecord]) -> Result<Dataset> {
    let root = root.as_ref();
    let mut ids = Vec::with_capacity(samples.len());
    for s in samples {
        check_sample_id(&s.sample_id)?;
        save_sample(s, root.join("samples").join(&s.sample_id))?;
        ids.push(s.sample_id.clone());
    }
    let index = DatasetIndex { format_version: FORMAT_VERSION, samples: ids, synthetic: None };
    write_atomic(&root.join("index.json"), &pretty(&index))?;
    Ok(Dataset { root: root.to_path_buf(), index })
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("index.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        if index.format_version != FORMAT_VERSION {
            return Err(Error::format(&path, format!("unsupported format version {}", index.format_version)));
        }
        for id in &index.samples {
            check_sample_id(id).map_err(|e| Error::format(&path, e.to_string()))?;
        }
        Ok(Dataset { root, index })
    }

    /// Keeps `limit` samples (all when 0) starting at `offset`.
    pub fn restrict(mut self, offset: usize, limit: usize) -> Result<Self> {
        let n = self.len();
        if offset > n {
            return Err(Error::Usage(format!("offset {offset} beyond the {n} samples of the dataset")));
        }
        let end = if limit == 0 { n } else { (offset + limit).min(n) };
        self.index.samples = self.index.samples[offset..end].to_vec();
        Ok(self)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.samples.is_empty()
    }

    pub fn sample_dir(&self, id: &str) -> PathBuf {
        self.root.join("samples").join(id)
    }

    pub fn load(&self, id: &str) -> Result<SampleRecord> {
        let s = load_sample(self.sample_dir(id))?;
        if s.sample_id != id {
            return Err(Error::format(self.sample_dir(id), format!("manifest names sample {}", s.sample_id)));
        }
        Ok(s)
    }

    /// Every sample, in index order.
    pub fn load_all(&self) -> Result<Vec<SampleRecord>> {
        self.index.samples.iter().map(|id| self.load(id)).collect()
    }

    /// Planted gains, if the dataset was synthesized.
    pub fn load_truths(&self) -> Result<Option<Vec<SyntheticTruth>>> {
        if self.index.synthetic.is_none() {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(self.len());
        for id in &self.index.samples {
            let path = self.root.join("truth").join(format!("{id}.json"));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let t: SyntheticTruth = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
            if &t.sample_id != id {
                return Err(Error::format(&path, format!("truth for {}", t.sample_id)));
            }
            out.push(t);
        }
        Ok(Some(out))
    }

    /// Closed-form oracle rebuilt from the spec and truth sidecars.
    pub fn synthetic_oracle(&self) -> Result<SyntheticOracle> {
        let spec = self.index.synthetic.as_ref().ok_or_else(|| {
            Error::Usage(format!("{} is not a synthetic dataset", self.root.display()))
        })?;
        let truths = self.load_truths()?.unwrap_or_default();
        Ok(SyntheticOracle::new(spec, truths))
    }
}
