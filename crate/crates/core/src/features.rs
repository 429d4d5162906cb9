//! The frame matrix that every stage consumes and produces.

use nalgebra::{DMatrix, DVector, Dyn, Matrix, RowDVector, ViewStorage, U1};

use crate::error::{Error, Result};

/// `N` frames by `D` feature dimensions.
///
/// Construction checks that the matrix is non-empty and every entry is
/// finite, so downstream code never has to.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
}

pub(crate) type RowsView<'a> = Matrix<f64, Dyn, Dyn, ViewStorage<'a, f64, Dyn, Dyn, U1, Dyn>>;

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::usage(format!(
                "feature matrix must have at least one frame and one dimension (got {}x{})",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % data.nrows(), i / data.nrows());
            return Err(Error::usage(format!("non-finite feature value at frame {r}, dim {c}")));
        }
        Ok(Self { data })
    }

    /// Build from row-major frames; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::usage(format!("frame {i} has {} dims, expected {d}", r.len())));
        }
        Self::new(DMatrix::from_fn(n, d, |r, c| rows[r][c]))
    }

    pub fn from_row_slice(n: usize, d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::usage(format!("{} values cannot fill {n}x{d}", values.len())));
        }
        Self::new(DMatrix::from_row_slice(n, d, values))
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn frame(&self, n: usize) -> DVector<f64> {
        self.data.row(n).transpose()
    }

    pub fn frames(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.data.row_iter().map(|r| r.transpose())
    }

    pub(crate) fn rows_view(&self, start: usize, len: usize) -> RowsView<'_> {
        self.data.rows(start, len)
    }

    /// Select frames by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::usage("cannot select zero frames"));
        }
        Ok(Self { data: self.data.select_rows(indices) })
    }

    /// Stack several matrices of equal dimension vertically.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::usage("nothing to concatenate"))?;
        let d = first.dim();
        if parts.iter().any(|p| p.dim() != d) {
            return Err(Error::usage("cannot concatenate feature matrices of different dimension"));
        }
        let n: usize = parts.iter().map(|p| p.n_frames()).sum();
        let mut data = DMatrix::zeros(n, d);
        let mut at = 0;
        for p in parts {
            data.rows_mut(at, p.n_frames()).copy_from(&p.data);
            at += p.n_frames();
        }
        Ok(Self { data })
    }

    pub fn column_means(&self) -> RowDVector<f64> {
        self.data.row_mean()
    }

    /// Per-dimension (biased) variance over frames.
    pub fn column_variances(&self) -> DVector<f64> {
        let mean = self.column_means();
        let n = self.n_frames() as f64;
        DVector::from_iterator(
            self.dim(),
            self.data.column_iter().enumerate().map(|(c, col)| {
                col.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n
            }),
        )
    }

    /// Sample covariance (biased, divides by `N`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.column_means();
        let mut centred = self.data.clone();
        for mut row in centred.row_iter_mut() {
            row -= &mean;
        }
        let mut cov = centred.transpose() * &centred / self.n_frames() as f64;
        crate::linalg::symmetrize(&mut cov);
        cov
    }

    /// Mean squared error per frame: `1/N Σ_n ‖a_n − b_n‖²`.
    pub fn mse(&self, other: &FeatureMatrix) -> Result<f64> {
        if self.data.shape() != other.data.shape() {
            return Err(Error::usage(format!(
                "shape mismatch for MSE: {:?} vs {:?}",
                self.data.shape(),
                other.data.shape()
            )));
        }
        Ok((&self.data - &other.data).norm_squared() / self.n_frames() as f64)
    }
}

/// Cepstral mean subtraction over one utterance: removes each dimension's
/// mean across frames.
pub fn cms(frames: &FeatureMatrix) -> FeatureMatrix {
    let mean = frames.column_means();
    let mut data = frames.data.clone();
    for mut row in data.row_iter_mut() {
        row -= &mean;
    }
    FeatureMatrix { data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(FeatureMatrix::new(DMatrix::zeros(0, 3)).is_err());
        assert!(FeatureMatrix::new(DMatrix::zeros(3, 0)).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 0)] = f64::NAN;
        let err = FeatureMatrix::new(m).unwrap_err().to_string();
        assert!(err.contains("frame 1, dim 0"), "{err}");
    }

    #[test]
    fn from_rows_rejects_ragged() {
        assert!(FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn cms_constant_utterance_is_zero() {
        let f = FeatureMatrix::from_rows(&vec![vec![3.0, -1.5, 7.25]; 5]).unwrap();
        assert!(cms(&f).as_matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cms_leaves_zero_mean_input_unchanged() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, -2.0], vec![-1.0, 2.0]]).unwrap();
        let out = cms(&f);
        assert!((out.as_matrix() - f.as_matrix()).amax() <= 1e-12);
    }

    #[test]
    fn cms_zeroes_column_means() {
        let f = FeatureMatrix::from_row_slice(
            4,
            3,
            &[1.0, 20.0, -3.0, 4.5, 21.0, 0.5, -7.0, 19.5, 8.0, 2.25, 25.0, 1.0],
        )
        .unwrap();
        let out = cms(&f);
        assert!(out.column_means().amax() <= 1e-10);
        let twice = cms(&out);
        assert!((twice.as_matrix() - out.as_matrix()).amax() <= 1e-12);
    }

    #[test]
    fn concat_and_select() {
        let a = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![3.0]]).unwrap();
        let c = FeatureMatrix::concat(&[a, b]).unwrap();
        assert_eq!(c.n_frames(), 3);
        assert_eq!(c.select(&[2, 0]).unwrap().as_matrix().as_slice(), &[3.0, 1.0]);
    }
}
