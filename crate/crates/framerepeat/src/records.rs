//! One JSON document per sample under a records directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use framerepeat_core::aoi::RepeatGainRecord;

use crate::error::{Error, Result};
use crate::sample_io::check_sample_id;

/// Writes via a temporary sibling and a rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn record_bytes(record: &RepeatGainRecord) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(record).expect("record serializes");
    b.push(b'\n');
    b
}

#[derive(Clone, Debug)]
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RecordStore { dir })
    }

    /// Opens an existing directory without creating it.
    pub fn existing(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "records directory not found"),
            ));
        }
        Ok(RecordStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, sample_id: &str) -> PathBuf {
        self.dir.join(format!("{sample_id}.json"))
    }

    pub fn get(&self, sample_id: &str) -> Result<Option<RepeatGainRecord>> {
        check_sample_id(sample_id)?;
        let path = self.path(sample_id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let r: RepeatGainRecord = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        if r.sample_id != sample_id {
            return Err(Error::format(&path, format!("holds record for {}", r.sample_id)));
        }
        r.validate().map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(Some(r))
    }

    pub fn put(&self, record: &RepeatGainRecord) -> Result<()> {
        check_sample_id(&record.sample_id)?;
        record.validate()?;
        write_atomic(&self.path(&record.sample_id), &record_bytes(record))
    }

    /// Every stored record, in sample-id order.
    pub fn all(&self) -> Result<Vec<RepeatGainRecord>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let name = entry.map_err(|e| Error::io(&self.dir, e))?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.extend(self.get(&id)?);
        }
        Ok(out)
    }
}
