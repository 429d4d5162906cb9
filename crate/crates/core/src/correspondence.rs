//! Co-assignment counts between clean and noisy mixtures.
//!
//! `V[i][j]` accumulates, over stereo pairs, the mass with which the clean
//! frame falls in clean mixture `i` while its noisy counterpart falls in
//! noisy mixture `j`. A permutation-shaped `V` means the two models are
//! mixture-corresponded.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gmm::Gmm;
use crate::stereo::StereoDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentMode {
    /// `Σ_n p(i|x_n) p(j|y_n)`
    Soft,
    /// `Σ_n 1(x_n ∈ i, y_n ∈ j)` with argmax assignments.
    Hard,
}

impl AssignmentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentMode::Soft => "soft",
            AssignmentMode::Hard => "hard",
        }
    }
}

impl std::str::FromStr for AssignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(AssignmentMode::Soft),
            "hard" => Ok(AssignmentMode::Hard),
            other => Err(Error::usage(format!("unknown assignment mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrix {
    /// Rows: clean mixtures. Columns: noisy mixtures.
    pub v: DMatrix<f64>,
    pub mode: AssignmentMode,
    pub n_frames: usize,
}

pub fn correspondence_matrix(
    clean_gmm: &Gmm,
    noisy_gmm: &Gmm,
    stereo: &StereoDataset,
    mode: AssignmentMode,
) -> Result<CorrespondenceMatrix> {
    let px = clean_gmm.posteriors(stereo.clean())?;
    let py = noisy_gmm.posteriors(stereo.noisy())?;
    from_posteriors(&px, &py, mode)
}

/// Build `V` from clean-side and noisy-side posterior matrices (`N × M_x`
/// and `N × M_y`).
pub fn from_posteriors(px: &DMatrix<f64>, py: &DMatrix<f64>, mode: AssignmentMode) -> Result<CorrespondenceMatrix> {
    if px.nrows() != py.nrows() {
        return Err(Error::usage("posterior matrices cover different numbers of frames"));
    }
    let n = px.nrows();
    let v = match mode {
        AssignmentMode::Soft => px.transpose() * py,
        AssignmentMode::Hard => {
            let mut v = DMatrix::zeros(px.ncols(), py.ncols());
            for (rx, ry) in px.row_iter().zip(py.row_iter()) {
                v[(rx.transpose().argmax().0, ry.transpose().argmax().0)] += 1.0;
            }
            v
        }
    };
    Ok(CorrespondenceMatrix { v, mode, n_frames: n })
}

impl CorrespondenceMatrix {
    pub fn total(&self) -> f64 {
        self.v.sum()
    }

    pub fn off_diagonal_mass(&self) -> f64 {
        self.total() - self.v.diagonal().sum()
    }

    /// For each clean mixture, the noisy mixture it co-occurs with most.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.v.row_iter().map(|r| r.transpose().argmax().0).collect()
    }

    /// The row argmax, if it is a bijection.
    pub fn row_argmax_permutation(&self) -> Option<Vec<usize>> {
        let am = self.row_argmax();
        let mut seen = vec![false; self.v.ncols()];
        for j in &am {
            if std::mem::replace(&mut seen[*j], true) {
                return None;
            }
        }
        (self.v.nrows() == self.v.ncols()).then_some(am)
    }

    /// The permutation carrying the most mass and the fraction of the total
    /// it carries.
    pub fn best_permutation(&self) -> (Vec<usize>, f64) {
        let perm = max_weight_assignment(&self.v);
        let mass: f64 = perm.iter().enumerate().map(|(i, j)| self.v[(i, *j)]).sum();
        let total = self.total();
        (perm, if total > 0.0 { mass / total } else { 0.0 })
    }

    /// Plain-text export: a `#` header line, then one row per clean mixture.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# mixtures={} mode={} frames={} total={:e}\n",
            self.v.nrows(),
            self.mode.as_str(),
            self.n_frames,
            self.total()
        );
        for r in self.v.row_iter() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("empty V matrix file"))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::format("V matrix header must start with '#'"))?;
        let mut m = None;
        let mut mode = None;
        let mut frames = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("mixtures", v)) => m = v.parse::<usize>().ok(),
                Some(("mode", v)) => mode = v.parse::<AssignmentMode>().ok(),
                Some(("frames", v)) => frames = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (m, mode, n_frames) = match (m, mode, frames) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::format("V matrix header lacks mixtures/mode/frames")),
        };
        let mut vals = Vec::with_capacity(m * m);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(format!("row {i}: {e}")))?;
            if row.len() != m {
                return Err(Error::format(format!("row {i} has {} entries, expected {m}", row.len())));
            }
            vals.extend(row);
        }
        if vals.len() != m * m {
            return Err(Error::format(format!("expected {m} rows")));
        }
        Ok(Self { v: DMatrix::from_row_slice(m, m, &vals), mode, n_frames })
    }
}

/// Hungarian algorithm (shortest augmenting path form) maximising
/// `Σ_i w[i][perm[i]]` over a square matrix.
pub fn max_weight_assignment(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    assert_eq!(n, w.ncols(), "assignment needs a square matrix");
    let big = w.max();
    let cost = |i: usize, j: usize| big - w[(i, j)];
    // 1-based potentials as in the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}
