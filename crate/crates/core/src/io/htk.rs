//! HTK parameter files.
//!
//! A 12-byte big-endian header
//!
//! | bytes | field          | type |
//! |-------|----------------|------|
//! | 0..4  | frame count    | i32  |
//! | 4..8  | sample period  | i32 (100 ns units) |
//! | 8..10 | bytes / frame  | i16  |
//! | 10..12| parameter kind | i16  |
//!
//! followed by `frames × dims` big-endian `f32`. Compressed (`_C`) and
//! checksummed (`_K`) variants, and the integer-valued base kinds, are
//! rejected rather than misread.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const HEADER_BYTES: usize = 12;

pub mod kind {
    pub const WAVEFORM: i16 = 0;
    pub const LPC: i16 = 1;
    pub const IREFC: i16 = 5;
    pub const MFCC: i16 = 6;
    pub const DISCRETE: i16 = 10;
    pub const USER: i16 = 9;
    pub const BASE_MASK: i16 = 0o77;

    pub const E: i16 = 0o100;
    pub const N: i16 = 0o200;
    pub const D: i16 = 0o400;
    pub const A: i16 = 0o1000;
    pub const C: i16 = 0o2000;
    pub const Z: i16 = 0o4000;
    pub const K: i16 = 0o10000;
    pub const ZERO: i16 = 0o20000;

    /// `MFCC_0`: cepstra including C0.
    pub const MFCC_0: i16 = MFCC | ZERO;
}

/// 10 ms frame shift.
pub const DEFAULT_SAMPLE_PERIOD: i32 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub frames: FeatureMatrix,
    /// In 100 ns units.
    pub sample_period: i32,
    pub param_kind: i16,
}

impl FeatureFile {
    pub fn mfcc(frames: FeatureMatrix) -> Self {
        Self { frames, sample_period: DEFAULT_SAMPLE_PERIOD, param_kind: kind::MFCC_0 }
    }

    pub fn sample_size(&self) -> usize {
        self.frames.dim() * 4
    }
}

fn check_kind(param_kind: i16) -> Result<()> {
    if param_kind < 0 {
        return Err(Error::format(format!("invalid parameter kind {param_kind}")));
    }
    if param_kind & kind::C != 0 {
        return Err(Error::format("compressed HTK files (_C) are not supported"));
    }
    if param_kind & kind::K != 0 {
        return Err(Error::format("checksummed HTK files (_K) are not supported"));
    }
    match param_kind & kind::BASE_MASK {
        kind::WAVEFORM | kind::IREFC | kind::DISCRETE => Err(Error::format(format!(
            "parameter kind {} stores integer samples, not float features",
            param_kind & kind::BASE_MASK
        ))),
        b if b > 13 => Err(Error::format(format!("unknown base parameter kind {b}"))),
        _ => Ok(()),
    }
}

pub fn parse_htk(bytes: &[u8]) -> Result<FeatureFile> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::format(format!("file is {} bytes, shorter than the 12-byte header", bytes.len())));
    }
    let n = i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let period = i32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let size = i16::from_be_bytes(bytes[8..10].try_into().expect("2 bytes"));
    let param_kind = i16::from_be_bytes(bytes[10..12].try_into().expect("2 bytes"));
    check_kind(param_kind)?;
    if n <= 0 {
        return Err(Error::format(format!("header declares {n} frames")));
    }
    if size <= 0 || size % 4 != 0 {
        return Err(Error::format(format!("sample size {size} is not a positive multiple of 4")));
    }
    if period <= 0 {
        return Err(Error::format(format!("sample period {period} is not positive")));
    }
    let (n, size) = (n as usize, size as usize);
    let body = &bytes[HEADER_BYTES..];
    let expected = n * size;
    if body.len() != expected {
        let held = body.len() as f64 / size as f64;
        return Err(Error::format(format!(
            "header declares {n} frames of {size} bytes ({expected} bytes) but the body holds {} bytes ({held} frames)",
            body.len()
        )));
    }
    let d = size / 4;
    let mut values = Vec::with_capacity(n * d);
    for chunk in body.chunks_exact(4) {
        let v = f32::from_be_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            let i = values.len();
            return Err(Error::format(format!("non-finite value at frame {}, dim {}", i / d, i % d)));
        }
        values.push(v as f64);
    }
    let frames = FeatureMatrix::new(DMatrix::from_row_slice(n, d, &values))?;
    Ok(FeatureFile { frames, sample_period: period, param_kind })
}

/// Serialise to HTK bytes. Values are narrowed to `f32`.
pub fn encode_htk(file: &FeatureFile) -> Result<Vec<u8>> {
    check_kind(file.param_kind)?;
    let n = i32::try_from(file.frames.n_frames()).map_err(|_| Error::usage("too many frames for an HTK file"))?;
    let size = i16::try_from(file.sample_size()).map_err(|_| Error::usage("too many dimensions for an HTK file"))?;
    if file.sample_period <= 0 {
        return Err(Error::usage("sample period must be positive"));
    }
    let m = file.frames.as_matrix();
    let mut out = Vec::with_capacity(HEADER_BYTES + m.len() * 4);
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(&file.sample_period.to_be_bytes());
    out.extend_from_slice(&size.to_be_bytes());
    out.extend_from_slice(&file.param_kind.to_be_bytes());
    for row in m.row_iter() {
        for v in row.iter() {
            let f = *v as f32;
            if !f.is_finite() {
                return Err(Error::usage(format!("value {v} overflows a 32-bit float")));
            }
            out.extend_from_slice(&f.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn read_htk(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_htk(&bytes).map_err(|e| e.at_path(path))
}

pub fn write_htk(file: &FeatureFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_htk(file)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: i32, period: i32, size: i16, kind: i16) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&n.to_be_bytes());
        v.extend_from_slice(&period.to_be_bytes());
        v.extend_from_slice(&size.to_be_bytes());
        v.extend_from_slice(&kind.to_be_bytes());
        v
    }

    #[test]
    fn thirteen_dims_is_52_bytes() {
        let f = FeatureFile::mfcc(FeatureMatrix::from_rows(&[vec![0.5; 13], vec![-1.0; 13]]).unwrap());
        let bytes = encode_htk(&f).unwrap();
        assert_eq!(i16::from_be_bytes([bytes[8], bytes[9]]), 52);
        assert_eq!(bytes.len(), 12 + 2 * 52);
        assert_eq!(parse_htk(&bytes).unwrap(), f);
    }

    #[test]
    fn golden_bytes() {
        // 1 frame, 2 dims: [1.0, -2.0], MFCC_0, 10 ms
        let f = FeatureFile::mfcc(FeatureMatrix::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let bytes = encode_htk(&f).unwrap();
        assert_eq!(
            bytes,
            [0, 0, 0, 1, 0, 1, 0x86, 0xa0, 0, 8, 0x20, 0x06, 0x3f, 0x80, 0, 0, 0xc0, 0, 0, 0]
        );
    }

    #[test]
    fn truncated_body_names_both_counts() {
        let mut bytes = header(10, 100_000, 8, kind::MFCC);
        bytes.extend(std::iter::repeat_n(0u8, 9 * 8));
        let msg = parse_htk(&bytes).unwrap_err().to_string();
        assert!(msg.contains("10 frames") && msg.contains("9 frames"), "{msg}");
    }

    #[test]
    fn corrupt_headers_rejected() {
        let body = vec![0u8; 8];
        for (h, what) in [
            (header(1, 100_000, 8, kind::MFCC | kind::C), "compressed"),
            (header(1, 100_000, 8, kind::MFCC | kind::K), "checksummed"),
            (header(1, 100_000, 8, kind::WAVEFORM), "integer"),
            (header(0, 100_000, 8, kind::MFCC), "0 frames"),
            (header(1, 100_000, 6, kind::MFCC), "multiple of 4"),
            (header(1, 0, 8, kind::MFCC), "period"),
            (header(1, 100_000, 8, -1), "kind"),
        ] {
            let mut bytes = h;
            bytes.extend_from_slice(&body);
            let err = parse_htk(&bytes).unwrap_err();
            assert!(matches!(err, Error::Format { .. }));
            assert!(err.to_string().contains(what), "{err} lacks {what}");
        }
        assert!(parse_htk(&[0, 1, 2]).is_err());
        let mut long = header(1, 100_000, 8, kind::MFCC);
        long.extend_from_slice(&[0u8; 9]);
        assert!(parse_htk(&long).is_err());
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = header(1, 100_000, 4, kind::MFCC);
        bytes.extend_from_slice(&f32::NAN.to_be_bytes());
        assert!(parse_htk(&bytes).is_err());
    }
}
