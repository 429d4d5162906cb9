//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Replace `a` with `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    (0..n).all(|i| ((i + 1)..n).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= rel_tol * scale))
}

/// Eigendecomposition of a symmetric matrix with eigenvalues clamped from
/// below at `floor`.
fn floored_eigen(a: &DMatrix<f64>, floor: f64) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(a.clone());
    for v in eig.eigenvalues.iter_mut() {
        if !(*v >= floor) {
            *v = floor;
        }
    }
    eig
}

fn recompose(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, c)] * f(eig.eigenvalues[c]));
    let mut out = scaled * q.transpose();
    symmetrize(&mut out);
    out
}

/// Clamp the eigenvalues of a symmetric matrix at `floor`.
///
/// Returns the input untouched (bit for bit) when it is already above the
/// floor, so flooring never perturbs well-conditioned covariances.
pub fn floor_eigenvalues(a: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.iter().all(|v| *v >= floor) {
        return (a.clone(), false);
    }
    (recompose(&floored_eigen(a, floor), |v| v), true)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// Symmetric PSD square root `A^{1/2}` (eigenvalues floored at `floor`
/// before rooting).
pub fn sqrtm_sym(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    recompose(&floored_eigen(a, floor), f64::sqrt)
}

/// Symmetric inverse square root `A^{-1/2}`.
pub fn inv_sqrtm_sym(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    recompose(&floored_eigen(a, floor), |v| 1.0 / v.sqrt())
}

/// Solve `X · a = b` for `X` with `a` symmetric positive definite.
pub fn solve_right_spd(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    // X a = b  <=>  a Xᵀ = bᵀ
    Ok(chol.solve(&b.transpose()).transpose())
}

/// Minimum-norm solution of `h x = g` through an SVD pseudo-inverse.
/// Returns the solution and the numerical rank of `h`.
pub fn solve_min_norm(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let svd = h.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * h.nrows().max(h.ncols()) as f64 * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let x = svd
        .solve(g, eps)
        .map_err(|e| Error::numerical(format!("pseudo-inverse solve failed: {e}")))?;
    Ok((x, rank))
}

/// `‖a − b‖_F / ‖b‖_F` (absolute when `b` is zero).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let num = (a - b).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
