//! Corpus manifests.
//!
//! A tab-separated file whose first line is a header naming its columns.
//! `id` and `path` are required; `condition` and `partner` are optional.
//! Column order is free and unknown columns are ignored. Blank lines and
//! lines starting with `#` are skipped.
//!
//! ```text
//! id	path	condition	partner
//! u1.noisy	noisy/u1.htk	babble	u1.clean
//! u1.clean	clean/u1.htk	clean
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stereo::StereoDataset;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub condition: Option<String>,
    pub partner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    records: Vec<ManifestRecord>,
    index: HashMap<String, usize>,
}

impl CorpusManifest {
    /// Fails on duplicate or empty ids.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.id.is_empty() || r.id.contains(char::is_whitespace) {
                return Err(Error::usage(format!("invalid utterance id '{}'", r.id)));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::usage(format!("duplicate utterance id '{}'", r.id)));
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    /// Records that name a partner, paired with the partner record, as
    /// `(noisy, clean)`. Any partner that does not resolve is reported
    /// together with every other unresolved one.
    pub fn stereo_pairs(&self) -> Result<Vec<(&ManifestRecord, &ManifestRecord)>> {
        let mut pairs = Vec::new();
        let mut missing = Vec::new();
        for r in &self.records {
            if let Some(p) = &r.partner {
                match self.get(p) {
                    Some(c) => pairs.push((r, c)),
                    None => missing.push(format!("{} -> {p}", r.id)),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::usage(format!("unresolved stereo partners: {}", missing.join(", "))));
        }
        if pairs.is_empty() {
            return Err(Error::usage("manifest has no stereo partner column entries"));
        }
        Ok(pairs)
    }

    /// Records grouped by condition label; unlabelled records fall in `None`.
    pub fn by_condition(&self) -> BTreeMap<Option<&str>, Vec<&ManifestRecord>> {
        let mut groups: BTreeMap<Option<&str>, Vec<&ManifestRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(r.condition.as_deref()).or_default().push(r);
        }
        groups
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tpath\tcondition\tpartner\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.id,
                r.path.display(),
                r.condition.as_deref().unwrap_or(""),
                r.partner.as_deref().unwrap_or("")
            );
        }
        out
    }
}

/// Parse manifest text; relative paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<CorpusManifest> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| Error::format("manifest is empty"))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let (Some(id_col), Some(path_col)) = (find("id"), find("path")) else {
        return Err(Error::format(format!("manifest header must name 'id' and 'path' columns, found '{header}'")));
    };
    let cond_col = find("condition");
    let partner_col = find("partner");
    let mut records = Vec::new();
    for (line, l) in lines {
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        let field = |c: Option<usize>| c.and_then(|c| fields.get(c)).filter(|s| !s.is_empty()).map(|s| s.to_string());
        let (Some(id), Some(path)) = (field(Some(id_col)), field(Some(path_col))) else {
            return Err(Error::format(format!("line {line}: missing id or path")));
        };
        let path = PathBuf::from(path);
        let path = if path.is_relative() { base.join(path) } else { path };
        records.push(ManifestRecord { id, path, condition: field(cond_col), partner: field(partner_col) });
    }
    CorpusManifest::new(records)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base).map_err(|e| e.at_path(path))
}

/// Load every stereo pair and stack them into one dataset. A pair whose
/// two files differ in frame count is a format error.
pub fn load_stereo(manifest: &CorpusManifest, cms: bool) -> Result<StereoDataset> {
    let pairs = manifest.stereo_pairs()?;
    let loaded: Vec<(FeatureMatrix, FeatureMatrix)> = pairs
        .iter()
        .map(|(noisy, clean)| {
            let y = super::read_features(&noisy.path)?;
            let x = super::read_features(&clean.path)?;
            if x.n_frames() != y.n_frames() {
                return Err(Error::format(format!(
                    "stereo pair {} / {} has {} noisy and {} clean frames",
                    noisy.id,
                    clean.id,
                    y.n_frames(),
                    x.n_frames()
                )));
            }
            Ok(if cms { (crate::features::cms(&x), crate::features::cms(&y)) } else { (x, y) })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    StereoDataset::new(FeatureMatrix::concat(&xs)?, FeatureMatrix::concat(&ys)?)
}

/// Load and stack every listed file.
pub fn load_all<'a>(records: impl IntoIterator<Item = &'a ManifestRecord>, cms: bool) -> Result<FeatureMatrix> {
    let mats = records
        .into_iter()
        .map(|r| super::read_features(&r.path).map(|f| if cms { crate::features::cms(&f) } else { f }))
        .collect::<Result<Vec<_>>>()?;
    if mats.is_empty() {
        return Err(Error::usage("no feature files listed"));
    }
    FeatureMatrix::concat(&mats)
}
