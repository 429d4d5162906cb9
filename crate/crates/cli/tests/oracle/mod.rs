//! Reference computations written without the library's numerical
//! routines: explicit inverses and determinants, row-by-row loops and SVD
//! least squares.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use splice_core::{FeatureMatrix, Gmm};

/// Posterior matrix `N × M` computed frame by frame with an explicit
/// covariance inverse. Entries below `1e-12` are dropped and each row is
/// renormalised, matching the estimators' flooring rule.
pub fn posteriors(gmm: &Gmm, frames: &FeatureMatrix) -> DMatrix<f64> {
    let d = gmm.dim() as f64;
    let prepared: Vec<(DVector<f64>, DMatrix<f64>, f64, f64)> = gmm
        .components()
        .iter()
        .zip(gmm.weights().iter())
        .map(|(c, w)| {
            let cov = c.covariance().to_dense();
            let inv = cov.clone().try_inverse().expect("invertible covariance");
            let logdet = cov.determinant().ln();
            (c.mean().clone(), inv, logdet, w.ln())
        })
        .collect();
    let n = frames.n_frames();
    let mut out = DMatrix::zeros(n, gmm.n_mixtures());
    for i in 0..n {
        let y = frames.frame(i);
        let logs: Vec<f64> = prepared
            .iter()
            .map(|(mu, inv, logdet, lw)| {
                let r = &y - mu;
                lw - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet + (r.transpose() * inv * &r)[(0, 0)])
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p.iter_mut().for_each(|v| {
            if *v < 1e-12 {
                *v = 0.0
            }
        });
        let s: f64 = p.iter().sum();
        for (k, v) in p.iter().enumerate() {
            out[(i, k)] = v / s;
        }
    }
    out
}

/// Minimise `Σ_n p_n ‖x_n − A y_n − b‖²` by SVD least squares on the
/// `√p`-scaled augmented design `[yᵀ 1]`.
pub fn weighted_regression(clean: &FeatureMatrix, noisy: &FeatureMatrix, p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = (noisy.n_frames(), noisy.dim());
    let mut design = DMatrix::zeros(n, d + 1);
    let mut target = DMatrix::zeros(n, d);
    for i in 0..n {
        let s = p[i].sqrt();
        for c in 0..d {
            design[(i, c)] = s * noisy.as_matrix()[(i, c)];
            target[(i, c)] = s * clean.as_matrix()[(i, c)];
        }
        design[(i, d)] = s;
    }
    let sol = design.svd(true, true).solve(&target, 1e-14).expect("SVD solve");
    // sol is (d+1) × d; its transpose is [A | b]
    let t = sol.transpose();
    (t.columns(0, d).into_owned(), t.column(d).into_owned())
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn augmented(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let mut m = DMatrix::zeros(d, d + 1);
    m.columns_mut(0, d).copy_from(a);
    m.column_mut(d).copy_from(b);
    m
}

pub fn mse(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.as_matrix().iter().zip(b.as_matrix().iter()) {
        s += (x - y) * (x - y);
    }
    s / a.n_frames() as f64
}
