//! Feature files and corpus manifests.
//!
//! Files ending in `.csv` are read as comma-separated text; anything else
//! is treated as an HTK parameter file.

mod htk;
mod manifest;
mod text;

use std::path::Path;

pub use htk::{
    encode_htk, kind, parse_htk, read_htk, write_htk, FeatureFile, DEFAULT_SAMPLE_PERIOD, HEADER_BYTES,
};
pub use manifest::{load_all, load_stereo, parse_manifest, read_manifest, CorpusManifest, ManifestRecord};
pub use text::{parse_csv, read_csv, to_csv, write_csv};

use crate::error::Result;
use crate::features::FeatureMatrix;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    if is_csv(path) {
        read_csv(path)
    } else {
        read_htk(path).map(|f| f.frames)
    }
}

/// HTK output is written as `MFCC_0` at 10 ms.
pub fn write_features(frames: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_csv(frames, path)
    } else {
        write_htk(&FeatureFile::mfcc(frames.clone()), path)
    }
}
