//! Comma-separated frames, one frame per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub fn parse_csv(text: &str) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let d = *dim.get_or_insert(record.len());
        if record.len() != d {
            return Err(Error::format(format!("line {line}: {} fields, expected {d}", record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(format!("line {line}, field {}: '{field}' is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(Error::format(format!("line {line}, field {}: non-finite value", c + 1)));
            }
            values.push(v);
        }
        n += 1;
    }
    let Some(d) = dim else {
        return Err(Error::usage("CSV feature file holds no frames"));
    };
    FeatureMatrix::from_row_slice(n, d, &values)
}

/// Every value in shortest round-trip form.
pub fn to_csv(frames: &FeatureMatrix) -> String {
    let mut out = String::new();
    for row in frames.as_matrix().row_iter() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|e| e.at_path(path))
}

pub fn write_csv(frames: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(frames)).map_err(|e| Error::io(path, e))
}
