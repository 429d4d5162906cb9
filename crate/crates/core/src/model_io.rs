//! Text serialisation of models and transforms.
//!
//! Every file is line oriented: a magic line naming the format and version,
//! then `key value...` lines. Numbers are written in shortest round-trip
//! exponent form, so a write/read cycle reproduces every `f64` exactly and
//! the same model always serialises to the same bytes. The formats are
//! documented in the guide's file-format chapter.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gmm::{Covariance, CovarianceMode, Gaussian, Gmm};
use crate::mllr::MllrTransform;
use crate::runtime::AdaptedTransform;
use crate::transform::{MixtureFit, PiecewiseTransform, TransformKind};

pub const GMM_MAGIC: &str = "splice-gmm";
pub const TRANSFORM_MAGIC: &str = "splice-transform";
pub const ORACLE_MAGIC: &str = "splice-oracle";
pub const FORMAT_VERSION: u32 = 1;

/// First 16 bytes of SHA-256, hex encoded.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(16).fold(String::with_capacity(32), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn push_values<'a>(out: &mut String, key: &str, values: impl IntoIterator<Item = &'a f64>) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

fn push_matrix(out: &mut String, key: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{key}");
    for r in m.row_iter() {
        push_values(out, "row", r.iter());
    }
}

pub fn gmm_to_string(gmm: &Gmm) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{GMM_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "mixtures {}", gmm.n_mixtures());
    let _ = writeln!(out, "dim {}", gmm.dim());
    let _ = writeln!(out, "covariance {}", gmm.mode().as_str());
    for (k, c) in gmm.components().iter().enumerate() {
        let _ = writeln!(out, "component {k}");
        push_values(&mut out, "weight", [gmm.weights()[k]].iter());
        push_values(&mut out, "mean", c.mean().iter());
        match c.covariance() {
            Covariance::Full(m) => push_matrix(&mut out, "cov", m),
            Covariance::Diagonal(v) => push_values(&mut out, "var", v.iter()),
        }
    }
    out
}

/// Cursor over the significant lines of a model file.
struct Lines<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines().enumerate().peekable() }
    }

    fn skip_blank(&mut self) {
        while self.lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            self.lines.next();
        }
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.skip_blank();
        self.lines.peek().and_then(|(_, l)| l.split_whitespace().next())
    }

    /// Next line, which must start with `key`; returns the rest of the line.
    fn expect(&mut self, key: &str) -> Result<(usize, &'a str)> {
        self.skip_blank();
        let (i, line) = self
            .lines
            .next()
            .ok_or_else(|| Error::format(format!("unexpected end of file, expected '{key}'")))?;
        let line = line.trim();
        let (k, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        if k != key {
            return Err(Error::format(format!("line {}: expected '{key}', found '{k}'", i + 1)));
        }
        Ok((i + 1, rest.trim()))
    }

    fn expect_usize(&mut self, key: &str) -> Result<usize> {
        let (ln, rest) = self.expect(key)?;
        rest.parse().map_err(|_| Error::format(format!("line {ln}: '{key}' needs an integer, got '{rest}'")))
    }

    fn expect_word(&mut self, key: &str) -> Result<&'a str> {
        let (ln, rest) = self.expect(key)?;
        if rest.is_empty() {
            return Err(Error::format(format!("line {ln}: '{key}' needs a value")));
        }
        Ok(rest)
    }

    fn expect_values(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let (ln, rest) = self.expect(key)?;
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("line {ln}: {e}")))?;
        if vals.len() != n {
            return Err(Error::format(format!("line {ln}: '{key}' has {} values, expected {n}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("line {ln}: non-finite value")));
        }
        Ok(vals)
    }

    fn expect_vector(&mut self, key: &str, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.expect_values(key, n)?))
    }

    fn expect_matrix(&mut self, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        self.expect(key)?;
        let mut vals = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            vals.extend(self.expect_values("row", cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }

    fn expect_index(&mut self, key: &str, want: usize) -> Result<()> {
        let got = self.expect_usize(key)?;
        if got != want {
            return Err(Error::format(format!("expected {key} {want}, found {key} {got}")));
        }
        Ok(())
    }

    fn expect_magic(&mut self, magic: &str) -> Result<()> {
        let (ln, rest) = self.expect(magic)?;
        match rest.parse::<u32>() {
            Ok(FORMAT_VERSION) => Ok(()),
            _ => Err(Error::format(format!("line {ln}: unsupported {magic} version '{rest}'"))),
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        self.skip_blank();
        match self.lines.next() {
            None => Ok(()),
            Some((i, l)) => Err(Error::format(format!("line {}: trailing content '{}'", i + 1, l.trim()))),
        }
    }
}

pub fn gmm_from_str(text: &str) -> Result<Gmm> {
    let mut p = Lines::new(text);
    p.expect_magic(GMM_MAGIC)?;
    let m = p.expect_usize("mixtures")?;
    let d = p.expect_usize("dim")?;
    if m == 0 || d == 0 {
        return Err(Error::format("mixtures and dim must be positive"));
    }
    let mode: CovarianceMode = p.expect_word("covariance")?.parse().map_err(|e: Error| Error::format(e.to_string()))?;
    let mut weights = Vec::with_capacity(m);
    let mut comps = Vec::with_capacity(m);
    for k in 0..m {
        p.expect_index("component", k)?;
        weights.push(p.expect_values("weight", 1)?[0]);
        let mean = p.expect_vector("mean", d)?;
        let cov = match mode {
            CovarianceMode::Full => Covariance::Full(p.expect_matrix("cov", d, d)?),
            CovarianceMode::Diagonal => Covariance::Diagonal(p.expect_vector("var", d)?),
        };
        comps.push(Gaussian::new(mean, cov).map_err(|e| Error::format(format!("component {k}: {e}")))?);
    }
    p.expect_end()?;
    Gmm::new(weights, comps).map_err(|e| Error::format(e.to_string()))
}

fn push_transform_body(out: &mut String, t: &PiecewiseTransform) {
    let _ = writeln!(out, "{TRANSFORM_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "kind {}", t.kind().as_str());
    let _ = writeln!(out, "mixtures {}", t.n_mixtures());
    let _ = writeln!(out, "dim {}", t.dim());
    let _ = writeln!(out, "alignment {}", t.alignment_model());
    for k in 0..t.n_mixtures() {
        let _ = writeln!(out, "mixture {k}");
        let _ = writeln!(out, "fit {}", t.fits()[k].as_str());
        push_values(out, "clean_mean", t.clean_means()[k].iter());
        push_values(out, "bias", t.biases()[k].iter());
        push_matrix(out, "matrix", &t.matrices()[k]);
    }
}

pub fn transform_to_string(t: &PiecewiseTransform) -> String {
    let mut out = String::new();
    push_transform_body(&mut out, t);
    out
}

/// Base transform followed by an `adaptation` block holding the condition
/// tag, the MLLR matrix and one adapted bias per mixture.
pub fn adapted_to_string(a: &AdaptedTransform) -> String {
    let mut out = String::new();
    push_transform_body(&mut out, a.base());
    let _ = writeln!(out, "adaptation");
    let _ = writeln!(out, "condition {}", a.condition());
    push_matrix(&mut out, "mllr", a.mllr().matrix());
    for b in a.adapted_biases() {
        push_values(&mut out, "adapted_bias", b.iter());
    }
    out
}

/// Contents of a transform file: plain, or carrying an adaptation block.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformFile {
    Plain(PiecewiseTransform),
    Adapted(AdaptedTransform),
}

impl TransformFile {
    pub fn base(&self) -> &PiecewiseTransform {
        match self {
            TransformFile::Plain(t) => t,
            TransformFile::Adapted(a) => a.base(),
        }
    }
}

pub fn transform_file_from_str(text: &str) -> Result<TransformFile> {
    let mut p = Lines::new(text);
    p.expect_magic(TRANSFORM_MAGIC)?;
    let kind: TransformKind = p.expect_word("kind")?.parse().map_err(|e: Error| Error::format(e.to_string()))?;
    let m = p.expect_usize("mixtures")?;
    let d = p.expect_usize("dim")?;
    if m == 0 || d == 0 {
        return Err(Error::format("mixtures and dim must be positive"));
    }
    let alignment = p.expect_word("alignment")?.to_string();
    let mut matrices = Vec::with_capacity(m);
    let mut biases = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    let mut fits = Vec::with_capacity(m);
    for k in 0..m {
        p.expect_index("mixture", k)?;
        fits.push(p.expect_word("fit")?.parse::<MixtureFit>().map_err(|e| Error::format(e.to_string()))?);
        means.push(p.expect_vector("clean_mean", d)?);
        biases.push(p.expect_vector("bias", d)?);
        matrices.push(p.expect_matrix("matrix", d, d)?);
    }
    let base = PiecewiseTransform::new(kind, matrices, biases, means, fits, alignment)
        .map_err(|e| Error::format(e.to_string()))?;
    if p.peek_key() != Some("adaptation") {
        p.expect_end()?;
        return Ok(TransformFile::Plain(base));
    }
    p.expect("adaptation")?;
    let condition = p.expect_word("condition")?.to_string();
    let w = p.expect_matrix("mllr", d, d + 1)?;
    let adapted: Vec<DVector<f64>> = (0..m).map(|_| p.expect_vector("adapted_bias", d)).collect::<Result<_>>()?;
    p.expect_end()?;
    let mllr = MllrTransform::new(w).map_err(|e| Error::format(e.to_string()))?;
    AdaptedTransform::new(base, adapted, mllr, condition)
        .map(TransformFile::Adapted)
        .map_err(|e| Error::format(e.to_string()))
}

pub fn transform_from_str(text: &str) -> Result<PiecewiseTransform> {
    match transform_file_from_str(text)? {
        TransformFile::Plain(t) => Ok(t),
        TransformFile::Adapted(_) => Err(Error::format("expected a plain transform, found an adapted one")),
    }
}

pub fn adapted_from_str(text: &str) -> Result<AdaptedTransform> {
    match transform_file_from_str(text)? {
        TransformFile::Adapted(a) => Ok(a),
        TransformFile::Plain(_) => Err(Error::format("transform file has no adaptation block")),
    }
}

/// Ground-truth inverse channel of a synthetic corpus, per generating
/// mixture: the noisy-side mean (for matching against a trained GMM) and
/// the exact noisy→clean affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMaps {
    pub noisy_means: Vec<DVector<f64>>,
    pub matrices: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

pub fn oracle_to_string(o: &OracleMaps) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{ORACLE_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "mixtures {}", o.matrices.len());
    let _ = writeln!(out, "dim {}", o.biases.first().map_or(0, |b| b.len()));
    for k in 0..o.matrices.len() {
        let _ = writeln!(out, "mixture {k}");
        push_values(&mut out, "noisy_mean", o.noisy_means[k].iter());
        push_values(&mut out, "bias", o.biases[k].iter());
        push_matrix(&mut out, "matrix", &o.matrices[k]);
    }
    out
}

pub fn oracle_from_str(text: &str) -> Result<OracleMaps> {
    let mut p = Lines::new(text);
    p.expect_magic(ORACLE_MAGIC)?;
    let m = p.expect_usize("mixtures")?;
    let d = p.expect_usize("dim")?;
    let mut o = OracleMaps { noisy_means: vec![], matrices: vec![], biases: vec![] };
    for k in 0..m {
        p.expect_index("mixture", k)?;
        o.noisy_means.push(p.expect_vector("noisy_mean", d)?);
        o.biases.push(p.expect_vector("bias", d)?);
        o.matrices.push(p.expect_matrix("matrix", d, d)?);
    }
    p.expect_end()?;
    Ok(o)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_gmm(gmm: &Gmm, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &gmm_to_string(gmm))
}

pub fn read_gmm(path: impl AsRef<Path>) -> Result<Gmm> {
    let path = path.as_ref();
    gmm_from_str(&read_text(path)?).map_err(|e| e.at_path(path))
}

pub fn write_transform(t: &PiecewiseTransform, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &transform_to_string(t))
}

pub fn write_adapted(a: &AdaptedTransform, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &adapted_to_string(a))
}

pub fn read_transform_file(path: impl AsRef<Path>) -> Result<TransformFile> {
    let path = path.as_ref();
    transform_file_from_str(&read_text(path)?).map_err(|e| e.at_path(path))
}

/// Load a transform and check it against the alignment model it will be
/// used with. With `force` a fingerprint mismatch only warns.
pub fn read_transform_for(path: impl AsRef<Path>, gmm: &Gmm, force: bool) -> Result<TransformFile> {
    let file = read_transform_file(path)?;
    if let Err(e) = file.base().check_alignment(gmm) {
        let shape_ok = gmm.n_mixtures() == file.base().n_mixtures() && gmm.dim() == file.base().dim();
        if force && shape_ok {
            log::warn!("{e}; continuing because the check was overridden");
        } else {
            return Err(e);
        }
    }
    Ok(file)
}

pub fn write_oracle(o: &OracleMaps, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &oracle_to_string(o))
}

pub fn read_oracle(path: impl AsRef<Path>) -> Result<OracleMaps> {
    let path = path.as_ref();
    oracle_from_str(&read_text(path)?).map_err(|e| e.at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn gmm(mode: CovarianceMode) -> Gmm {
        let mk = |m: DVector<f64>, c: DMatrix<f64>| match mode {
            CovarianceMode::Full => Gaussian::full(m, c).unwrap(),
            CovarianceMode::Diagonal => Gaussian::diagonal(m, c.diagonal()).unwrap(),
        };
        Gmm::new(
            vec![0.1 + 0.2, 0.7],
            vec![
                mk(dvector![1.0 / 3.0, -2.5e-300], DMatrix::from_row_slice(2, 2, &[2.0, 1e-4, 1e-4, 1e-7])),
                mk(dvector![1e10, 0.0], DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 0.9])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn gmm_roundtrip_exact() {
        for mode in [CovarianceMode::Full, CovarianceMode::Diagonal] {
            let g = gmm(mode);
            let text = gmm_to_string(&g);
            let back = gmm_from_str(&text).unwrap();
            assert_eq!(back, g);
            assert_eq!(gmm_to_string(&back), text);
            assert_eq!(back.fingerprint(), g.fingerprint());
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let g = gmm(CovarianceMode::Full);
        let h = g.with_means(&[dvector![0.0, 0.0], dvector![1e10, 0.0]]).unwrap();
        assert_ne!(g.fingerprint(), h.fingerprint());
        assert_eq!(g.fingerprint().len(), 32);
    }

    #[test]
    fn transform_and_adapted_roundtrip() {
        let g = gmm(CovarianceMode::Full);
        let t = PiecewiseTransform::new(
            TransformKind::Splice,
            vec![DMatrix::from_row_slice(2, 2, &[1.1, 0.2, -0.3, 0.9]), DMatrix::identity(2, 2)],
            vec![dvector![0.5, -0.25], dvector![1.0 / 7.0, 2.0]],
            vec![dvector![3.0, 4.0], dvector![-1.0, 0.0]],
            vec![MixtureFit::Full, MixtureFit::BiasOnly],
            g.fingerprint(),
        )
        .unwrap();
        assert_eq!(transform_from_str(&transform_to_string(&t)).unwrap(), t);

        let a = AdaptedTransform::new(
            t.clone(),
            vec![dvector![0.1, 0.2], dvector![0.3, 0.4]],
            MllrTransform::shift(&dvector![0.5, -0.5]),
            "babble 10dB".into(),
        )
        .unwrap();
        let text = adapted_to_string(&a);
        assert_eq!(adapted_from_str(&text).unwrap(), a);
        assert!(transform_from_str(&text).is_err());
        assert!(adapted_from_str(&transform_to_string(&t)).is_err());
    }

    #[test]
    fn malformed_files_are_format_errors() {
        let g = gmm(CovarianceMode::Full);
        let text = gmm_to_string(&g);
        for bad in [
            text.replace("splice-gmm 1", "splice-gmm 9"),
            text.replace("mixtures 2", "mixtures 3"),
            text.replacen("weight", "wait", 1),
            format!("{text}extra\n"),
            text.lines().take(6).collect::<Vec<_>>().join("\n"),
        ] {
            assert!(matches!(gmm_from_str(&bad), Err(Error::Format { .. })), "{bad}");
        }
    }

    #[test]
    fn oracle_roundtrip() {
        let o = OracleMaps {
            noisy_means: vec![dvector![1.0, 2.0]],
            matrices: vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 2.0])],
            biases: vec![dvector![-1.0, 0.25]],
        };
        assert_eq!(oracle_from_str(&oracle_to_string(&o)).unwrap(), o);
    }
}
