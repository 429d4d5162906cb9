//! Gaussian mixture densities: evaluation, alignment, EM training and
//! sampling.
//!
//! All density arithmetic happens in the log domain. A 128-component model
//! evaluated on 13-dimensional cepstra routinely produces per-component
//! likelihoods far below `f64::MIN_POSITIVE`, so posteriors are computed with
//! a log-sum-exp over `log π_m + log N(y; μ_m, Σ_m)`.

mod em;
mod sample;

pub use em::{fit_em, fit_em_from, EmFit, EmOptions, InitPolicy};
pub use sample::{sample, sample_labelled};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, RowsView};
use crate::linalg::{self, KahanSum};
use crate::parallel::map_chunks;

/// How component covariances are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CovarianceMode {
    #[default]
    Full,
    Diagonal,
}

impl CovarianceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMode::Full => "full",
            CovarianceMode::Diagonal => "diagonal",
        }
    }
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceMode::Full),
            "diagonal" | "diag" => Ok(CovarianceMode::Diagonal),
            other => Err(Error::usage(format!("unknown covariance mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl Covariance {
    pub fn mode(&self) -> CovarianceMode {
        match self {
            Covariance::Full(_) => CovarianceMode::Full,
            Covariance::Diagonal(_) => CovarianceMode::Diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full(m) => m.nrows(),
            Covariance::Diagonal(v) => v.len(),
        }
    }

    /// Dense `D×D` form.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Full(m) => m.clone(),
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
        }
    }

    /// Smallest eigenvalue (smallest variance in diagonal mode).
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Full(m) => linalg::min_eigenvalue(m),
            Covariance::Diagonal(v) => v.min(),
        }
    }

    pub(crate) fn floored(self, floor: f64) -> Covariance {
        match self {
            Covariance::Full(mut m) => {
                linalg::symmetrize(&mut m);
                Covariance::Full(linalg::floor_eigenvalues(&m, floor).0)
            }
            Covariance::Diagonal(v) => Covariance::Diagonal(v.map(|x| if x >= floor { x } else { floor })),
        }
    }
}

/// Cached factorisation used to evaluate `log N(y; μ, Σ)`.
#[derive(Debug, Clone)]
enum Factor {
    /// Lower Cholesky factor of Σ.
    Full(DMatrix<f64>),
    /// Reciprocal variances.
    Diagonal(DVector<f64>),
}

/// A single multivariate normal component.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: Covariance,
    factor: Factor,
    /// `-½ (D log 2π + log |Σ|)`
    log_norm: f64,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::usage("gaussian must have at least one dimension"));
        }
        if cov.dim() != d {
            return Err(Error::usage(format!("mean has {d} dims but covariance has {}", cov.dim())));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("gaussian mean must be finite"));
        }
        let (factor, log_det) = match &cov {
            Covariance::Full(m) => {
                if m.iter().any(|v| !v.is_finite()) || !linalg::is_symmetric(m, 1e-12) {
                    return Err(Error::usage("covariance must be finite and symmetric"));
                }
                let chol = m
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::numerical("covariance is not positive definite"))?;
                let l = chol.unpack();
                let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                (Factor::Full(l), log_det)
            }
            Covariance::Diagonal(v) => {
                if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(Error::numerical("variances must be finite and positive"));
                }
                (Factor::Diagonal(v.map(|x| 1.0 / x)), v.iter().map(|x| x.ln()).sum())
            }
        };
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self { mean, cov, factor, log_norm })
    }

    pub fn full(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, Covariance::Full(cov))
    }

    pub fn diagonal(mean: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        Self::new(mean, Covariance::Diagonal(variances))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn mode(&self) -> CovarianceMode {
        self.cov.mode()
    }

    /// Same covariance, different mean. The covariance (and its cached
    /// factor) is copied bit for bit.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::usage("replacement mean has wrong dimension"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("replacement mean is not finite"));
        }
        Ok(Self { mean, ..self.clone() })
    }

    pub fn log_pdf(&self, y: &DVector<f64>) -> f64 {
        let r = y - &self.mean;
        let maha = match &self.factor {
            Factor::Full(l) => l.solve_lower_triangular(&r).map_or(f64::INFINITY, |z| z.norm_squared()),
            Factor::Diagonal(inv) => r.iter().zip(inv.iter()).map(|(a, b)| a * a * b).sum(),
        };
        self.log_norm - 0.5 * maha
    }

    /// `log N(y_n)` for every row of a block of frames.
    pub(crate) fn log_pdf_rows(&self, rows: &RowsView<'_>) -> DVector<f64> {
        let n = rows.nrows();
        let d = self.dim();
        // residuals as columns: D × n
        let mut r = rows.transpose();
        for mut col in r.column_iter_mut() {
            col -= &self.mean;
        }
        let maha: Vec<f64> = match &self.factor {
            Factor::Full(l) => {
                l.solve_lower_triangular_mut(&mut r);
                r.column_iter().map(|c| c.norm_squared()).collect()
            }
            Factor::Diagonal(inv) => r
                .column_iter()
                .map(|c| (0..d).map(|i| c[i] * c[i] * inv[i]).sum())
                .collect(),
        };
        DVector::from_iterator(n, maha.into_iter().map(|m| self.log_norm - 0.5 * m))
    }
}

/// A weighted mixture of Gaussians sharing dimension and storage mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: DVector<f64>,
    components: Vec<Gaussian>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::usage("a mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::usage(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        let mode = components[0].mode();
        if components.iter().any(|c| c.dim() != d || c.mode() != mode) {
            return Err(Error::usage("all components must share dimension and covariance mode"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::usage("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::usage(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { weights: DVector::from_vec(weights), components })
    }

    pub fn n_mixtures(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn mode(&self) -> CovarianceMode {
        self.components[0].mode()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn component(&self, m: usize) -> &Gaussian {
        &self.components[m]
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// Replace every component mean, keeping weights and covariances
    /// bit-identical and component order unchanged.
    pub fn with_means(&self, means: &[DVector<f64>]) -> Result<Self> {
        if means.len() != self.n_mixtures() {
            return Err(Error::usage("one mean per component required"));
        }
        let components = self
            .components
            .iter()
            .zip(means)
            .map(|(c, m)| c.with_mean(m.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights: self.weights.clone(), components })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::usage(format!(
                "frame dimension {d} does not match model dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `log p(y)` for a single frame.
    pub fn log_density(&self, frame: &[f64]) -> Result<f64> {
        self.check_dim(frame.len())?;
        let y = DVector::from_column_slice(frame);
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_pdf(&y))
            .collect();
        Ok(linalg::log_sum_exp(&terms))
    }

    /// `log π_m + log N(y_n; μ_m, Σ_m)` for a block of frames, `n × M`.
    pub(crate) fn log_joint_rows(&self, rows: &RowsView<'_>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.nrows(), self.n_mixtures());
        for (m, c) in self.components.iter().enumerate() {
            let lw = self.weights[m].ln();
            let lp = c.log_pdf_rows(rows);
            out.column_mut(m).copy_from(&lp.add_scalar(lw));
        }
        out
    }

    /// Turn a block of log-joint rows into posteriors in place and return
    /// the compensated sum of the per-row log-likelihoods.
    pub(crate) fn normalize_rows(log_joint: &mut DMatrix<f64>) -> KahanSum {
        let mut ll = KahanSum::default();
        let m = log_joint.ncols();
        let mut buf = vec![0.0; m];
        for mut row in log_joint.row_iter_mut() {
            for (b, v) in buf.iter_mut().zip(row.iter()) {
                *b = *v;
            }
            let lse = linalg::log_sum_exp(&buf);
            ll.add(lse);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
                s += *v;
            }
            // exp rounding can leave the row a few ulps off the simplex
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        ll
    }

    /// Posterior responsibilities `p(m | y_n)`, an `N × M` matrix whose rows
    /// lie on the probability simplex.
    pub fn posteriors(&self, frames: &FeatureMatrix) -> Result<DMatrix<f64>> {
        self.check_dim(frames.dim())?;
        let blocks = map_chunks(frames.n_frames(), |s, l| {
            let mut lj = self.log_joint_rows(&frames.rows_view(s, l));
            Self::normalize_rows(&mut lj);
            (s, lj)
        });
        let mut out = DMatrix::zeros(frames.n_frames(), self.n_mixtures());
        for (s, b) in blocks {
            out.rows_mut(s, b.nrows()).copy_from(&b);
        }
        Ok(out)
    }

    /// Total log-likelihood `Σ_n log p(y_n)`.
    pub fn log_likelihood(&self, frames: &FeatureMatrix) -> Result<f64> {
        self.check_dim(frames.dim())?;
        let parts = map_chunks(frames.n_frames(), |s, l| {
            let mut lj = self.log_joint_rows(&frames.rows_view(s, l));
            Self::normalize_rows(&mut lj).value()
        });
        let mut total = KahanSum::default();
        for p in parts {
            total.add(p);
        }
        Ok(total.value())
    }

    /// Index of the most probable component for each frame.
    pub fn hard_assign(&self, frames: &FeatureMatrix) -> Result<Vec<usize>> {
        let post = self.posteriors(frames)?;
        Ok(post.row_iter().map(|r| r.transpose().argmax().0).collect())
    }

    /// Stable content hash of the serialised model, used to tie transforms
    /// to the alignment model they were estimated against.
    pub fn fingerprint(&self) -> String {
        crate::model_io::fingerprint(&crate::model_io::gmm_to_string(self))
    }
}

/// Variance floor used throughout: `1e-6 ×` the mean per-dimension variance
/// of the data a model is fitted to.
pub fn covariance_floor(frames: &FeatureMatrix) -> f64 {
    let v = frames.column_variances().mean();
    if v > 0.0 {
        1e-6 * v
    } else {
        1e-12
    }
}
