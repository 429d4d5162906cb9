use std::path::{Path, PathBuf};

use rayon::prelude::*;
use splice_core::io::{read_features, read_manifest, CorpusManifest, ManifestRecord};
use splice_core::{cms, Error, FeatureMatrix, Result};

/// Settings shared by every subcommand.
pub struct Context {
    pub seed: u64,
    pub cms: bool,
    pub model_dir: Option<PathBuf>,
}

impl Context {
    /// Relative model paths resolve against the model directory, if set.
    pub fn model_path(&self, p: &Path) -> PathBuf {
        match &self.model_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn manifest(&self, path: &Path) -> Result<CorpusManifest> {
        if !path.exists() {
            return Err(Error::Usage(format!("manifest {} does not exist", path.display())));
        }
        let m = read_manifest(path)?;
        if m.is_empty() {
            return Err(Error::Usage(format!("manifest {} lists no files", path.display())));
        }
        Ok(m)
    }

    pub fn load(&self, path: &Path) -> Result<FeatureMatrix> {
        let f = read_features(path)?;
        Ok(if self.cms { cms(&f) } else { f })
    }

    /// Load files in parallel, returned in input order.
    pub fn load_each(&self, records: &[&ManifestRecord]) -> Result<Vec<FeatureMatrix>> {
        records.par_iter().map(|r| self.load(&r.path)).collect()
    }

    pub fn load_stacked(&self, records: &[&ManifestRecord]) -> Result<FeatureMatrix> {
        FeatureMatrix::concat(&self.load_each(records)?)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Output name for an input record: `<dir>/<id>.<input extension>`.
pub fn output_path(dir: &Path, record: &ManifestRecord) -> PathBuf {
    let ext = record.path.extension().and_then(|e| e.to_str()).unwrap_or("htk");
    dir.join(format!("{}.{ext}", record.id))
}

/// A condition label made safe for use as a file name.
pub fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}
