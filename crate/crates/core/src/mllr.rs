//! Global MLLR mean adaptation of a GMM.
//!
//! A single affine map `μ ↦ W ξ`, `ξ = [1, μᵀ]ᵀ`, is applied to every
//! component mean; weights and covariances are left alone. `W` is chosen to
//! maximise the EM auxiliary function of the adaptation frames:
//!
//! ```text
//! Σ_m Γ_m Σ_m⁻¹ W ξ_m ξ_mᵀ = Σ_m Σ_m⁻¹ s_m ξ_mᵀ,   s_m = Σ_n γ_nm x_n
//! ```
//!
//! With diagonal covariances the system separates into one `(D+1)`-sized
//! problem per output row. With full covariances it is solved jointly in
//! `vec(W)` through the Kronecker form `Σ_m Γ_m (ξ_m ξ_mᵀ ⊗ Σ_m⁻¹)`.
//!
//! Each cycle solves for the minimum-norm *change* from the current `W`.
//! When the normal equations are singular (fewer frames than parameters,
//! or a single component) the result is the ML solution closest to the
//! starting point, and the auxiliary function, hence the likelihood,
//! cannot decrease.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{Covariance, Gmm};
use crate::linalg::solve_min_norm;
use crate::parallel::map_chunks;

/// `D × (D+1)` mean transform acting on extended means `[1, μᵀ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MllrTransform {
    w: DMatrix<f64>,
}

impl MllrTransform {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() != w.nrows() + 1 {
            return Err(Error::usage(format!("MLLR matrix must be D x (D+1), got {:?}", w.shape())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("MLLR matrix has non-finite entries"));
        }
        Ok(Self { w })
    }

    /// `[0 | I]`.
    pub fn identity(d: usize) -> Self {
        let mut w = DMatrix::zeros(d, d + 1);
        for i in 0..d {
            w[(i, i + 1)] = 1.0;
        }
        Self { w }
    }

    /// `[c | I]`: a pure shift by `c`.
    pub fn shift(c: &DVector<f64>) -> Self {
        let mut t = Self::identity(c.len());
        t.w.column_mut(0).copy_from(c);
        t
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn offset(&self) -> DVector<f64> {
        self.w.column(0).into_owned()
    }

    pub fn linear(&self) -> DMatrix<f64> {
        self.w.columns(1, self.dim()).into_owned()
    }

    pub fn apply(&self, mean: &DVector<f64>) -> DVector<f64> {
        self.w.column(0) + self.w.columns(1, self.dim()) * mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MllrOptions {
    /// Number of E-step / maximisation cycles, at least one. A single
    /// cycle scores the data against the unadapted means, which is biased
    /// once the mismatch is comparable to the mixture spacing; each further
    /// cycle re-scores against the current estimate.
    pub cycles: usize,
}

impl Default for MllrOptions {
    fn default() -> Self {
        Self { cycles: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct MllrEstimate {
    pub transform: MllrTransform,
    /// Adaptation-data log-likelihood under the unadapted model.
    pub log_likelihood_before: f64,
    /// ... and under the adapted model.
    pub log_likelihood_after: f64,
    /// Numerical rank of the last normal-equation system.
    pub rank: usize,
    /// Number of unknowns in the system (`D(D+1)`).
    pub unknowns: usize,
}

impl MllrEstimate {
    /// The normal equations did not determine `W` uniquely; the
    /// minimum-change solution was used.
    pub fn is_regularised(&self) -> bool {
        self.rank < self.unknowns
    }
}

/// Replace every mean `μ_m` by `W ξ_m`. Weights, covariances and component
/// order are untouched.
pub fn apply_mllr_means(gmm: &Gmm, w: &MllrTransform) -> Result<Gmm> {
    if w.dim() != gmm.dim() {
        return Err(Error::usage(format!(
            "MLLR transform is for dimension {} but model has {}",
            w.dim(),
            gmm.dim()
        )));
    }
    let means: Vec<DVector<f64>> = gmm.components().iter().map(|c| w.apply(c.mean())).collect();
    gmm.with_means(&means)
}

pub fn estimate_global_mllr_mean(gmm: &Gmm, frames: &FeatureMatrix) -> Result<MllrEstimate> {
    estimate_global_mllr_mean_with(gmm, frames, &MllrOptions::default())
}

pub fn estimate_global_mllr_mean_with(gmm: &Gmm, frames: &FeatureMatrix, opts: &MllrOptions) -> Result<MllrEstimate> {
    let d = gmm.dim();
    if frames.dim() != d {
        return Err(Error::usage(format!(
            "frame dimension {} does not match model dimension {d}",
            frames.dim()
        )));
    }
    if opts.cycles == 0 {
        return Err(Error::usage("MLLR needs at least one cycle"));
    }
    if frames.n_frames() < d + 1 {
        log::warn!(
            "only {} adaptation frames for a {d}-dimensional MLLR transform; using the minimum-change solution",
            frames.n_frames()
        );
    }
    let before = gmm.log_likelihood(frames)?;
    let mut current = MllrTransform::identity(d);
    let mut rank = 0;
    for _ in 0..opts.cycles {
        let adapted = apply_mllr_means(gmm, &current)?;
        let (occ, sums) = first_order_stats(&adapted, frames)?;
        let (next, r) = maximize(gmm, &current, &occ, &sums)?;
        current = next;
        rank = r;
    }
    let after = apply_mllr_means(gmm, &current)?.log_likelihood(frames)?;
    let unknowns = d * (d + 1);
    if rank < unknowns {
        log::warn!("MLLR normal equations have rank {rank} of {unknowns}");
    }
    Ok(MllrEstimate { transform: current, log_likelihood_before: before, log_likelihood_after: after, rank, unknowns })
}

/// Occupancies `Γ_m` and first-order sums `s_m` (as columns, `D × M`).
fn first_order_stats(gmm: &Gmm, frames: &FeatureMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let post = gmm.posteriors(frames)?;
    let m = gmm.n_mixtures();
    let parts = map_chunks(frames.n_frames(), |s, l| {
        let p = post.rows(s, l);
        let occ: Vec<f64> = p.column_iter().map(|c| c.sum()).collect();
        (occ, frames.rows_view(s, l).transpose() * p)
    });
    let mut occ = vec![0.0; m];
    let mut sums = DMatrix::zeros(gmm.dim(), m);
    for (o, s) in parts {
        for k in 0..m {
            occ[k] += o[k];
        }
        sums += s;
    }
    Ok((occ, sums))
}

fn extended(mean: &DVector<f64>) -> DVector<f64> {
    let mut xi = DVector::zeros(mean.len() + 1);
    xi[0] = 1.0;
    xi.rows_mut(1, mean.len()).copy_from(mean);
    xi
}

fn maximize(gmm: &Gmm, current: &MllrTransform, occ: &[f64], sums: &DMatrix<f64>) -> Result<(MllrTransform, usize)> {
    let d = gmm.dim();
    let e = d + 1;
    let xis: Vec<DVector<f64>> = gmm.components().iter().map(|c| extended(c.mean())).collect();
    let mut w = current.w.clone();
    let rank = match gmm.components()[0].covariance() {
        Covariance::Diagonal(_) => {
            let mut total_rank = 0;
            for i in 0..d {
                let mut h = DMatrix::zeros(e, e);
                let mut g = DVector::zeros(e);
                for (k, c) in gmm.components().iter().enumerate() {
                    let Covariance::Diagonal(var) = c.covariance() else { unreachable!("mode is shared") };
                    let inv = 1.0 / var[i];
                    h += &xis[k] * xis[k].transpose() * (occ[k] * inv);
                    g += &xis[k] * (sums[(i, k)] * inv);
                }
                let row = current.w.row(i).transpose();
                let rhs = g - &h * &row;
                let (delta, r) = solve_min_norm(&h, &rhs)?;
                w.row_mut(i).copy_from(&(row + delta).transpose());
                total_rank += r;
            }
            total_rank
        }
        Covariance::Full(_) => {
            let n = d * e;
            let mut h = DMatrix::zeros(n, n);
            let mut g = DMatrix::zeros(d, e);
            for (k, c) in gmm.components().iter().enumerate() {
                let Covariance::Full(cov) = c.covariance() else { unreachable!("mode is shared") };
                let prec = cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::numerical("component covariance is not positive definite"))?
                    .inverse();
                let xi = &xis[k];
                for a in 0..e {
                    for b in 0..e {
                        let s = occ[k] * xi[a] * xi[b];
                        if s == 0.0 {
                            continue;
                        }
                        let mut block = h.view_mut((a * d, b * d), (d, d));
                        block += &prec * s;
                    }
                }
                g += &prec * sums.column(k) * xi.transpose();
            }
            // vec() is column-major, matching nalgebra's storage
            let g = DVector::from_column_slice(g.as_slice());
            let cur = DVector::from_column_slice(current.w.as_slice());
            let rhs = g - &h * &cur;
            let (delta, r) = solve_min_norm(&h, &rhs)?;
            let next = cur + delta;
            w = DMatrix::from_column_slice(d, e, next.as_slice());
            r
        }
    };
    Ok((MllrTransform::new(w)?, rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{sample, Gaussian};
    use nalgebra::dvector;

    fn model(diagonal: bool) -> Gmm {
        let comps = [(dvector![0.0, 0.0], [1.0, 0.3, 0.3, 0.7]), (dvector![8.0, 3.0], [0.5, -0.1, -0.1, 1.2]), (dvector![-4.0, 9.0], [0.9, 0.0, 0.0, 0.4])]
            .into_iter()
            .map(|(m, c)| {
                let c = DMatrix::from_row_slice(2, 2, &c);
                if diagonal {
                    Gaussian::diagonal(m, c.diagonal()).unwrap()
                } else {
                    Gaussian::full(m, c).unwrap()
                }
            })
            .collect();
        Gmm::new(vec![0.3, 0.3, 0.4], comps).unwrap()
    }

    #[test]
    fn identity_and_shift_application() {
        let g = model(false);
        assert_eq!(apply_mllr_means(&g, &MllrTransform::identity(2)).unwrap(), g);
        let c = dvector![1.5, -2.0];
        let s = apply_mllr_means(&g, &MllrTransform::shift(&c)).unwrap();
        for (a, b) in s.components().iter().zip(g.components()) {
            assert_eq!(a.mean(), &(b.mean() + &c));
            assert_eq!(a.covariance(), b.covariance());
        }
    }

    #[test]
    fn random_w_matches_direct_product() {
        let g = model(false);
        let w = DMatrix::from_row_slice(2, 3, &[0.3, 1.1, -0.2, -0.7, 0.4, 0.9]);
        let t = MllrTransform::new(w.clone()).unwrap();
        let a = apply_mllr_means(&g, &t).unwrap();
        for (ac, gc) in a.components().iter().zip(g.components()) {
            let mu = gc.mean();
            let oracle = dvector![
                w[(0, 0)] + w[(0, 1)] * mu[0] + w[(0, 2)] * mu[1],
                w[(1, 0)] + w[(1, 1)] * mu[0] + w[(1, 2)] * mu[1]
            ];
            assert!((ac.mean() - oracle).amax() <= 1e-12);
        }
    }

    #[test]
    fn single_gaussian_mean_is_sample_mean() {
        let g = Gmm::new(vec![1.0], vec![Gaussian::full(dvector![0.0], DMatrix::from_element(1, 1, 2.0)).unwrap()]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![1.0], vec![2.5], vec![4.0], vec![-0.5]]).unwrap();
        let est = estimate_global_mllr_mean(&g, &f).unwrap();
        let adapted = est.transform.apply(&dvector![0.0]);
        assert!((adapted[0] - 1.75).abs() < 1e-10);
        assert!(est.is_regularised());
        assert!(est.log_likelihood_after >= est.log_likelihood_before - 1e-8);
    }

    #[test]
    fn known_shift_recovered_both_modes() {
        for diagonal in [false, true] {
            let g = model(diagonal);
            let c = dvector![2.0, -3.0];
            let shifted = apply_mllr_means(&g, &MllrTransform::shift(&c)).unwrap();
            let f = sample(&shifted, 6000, 4).unwrap();
            let est = estimate_global_mllr_mean_with(&g, &f, &MllrOptions { cycles: 3 }).unwrap();
            for comp in g.components() {
                let target = comp.mean() + &c;
                let got = est.transform.apply(comp.mean());
                assert!((&got - &target).norm() <= 0.05 * target.norm(), "{diagonal}: {got} vs {target}");
            }
            assert!(est.log_likelihood_after >= est.log_likelihood_before - 1e-8);
        }
    }

    #[test]
    fn diagonal_and_full_paths_agree_on_diagonal_model() {
        let diag = model(true);
        let full = Gmm::new(
            diag.weights().iter().copied().collect(),
            diag.components()
                .iter()
                .map(|c| Gaussian::full(c.mean().clone(), c.covariance().to_dense()).unwrap())
                .collect(),
        )
        .unwrap();
        let f = sample(&full, 500, 9).unwrap();
        let a = estimate_global_mllr_mean(&diag, &f).unwrap();
        let b = estimate_global_mllr_mean(&full, &f).unwrap();
        assert!((a.transform.matrix() - b.transform.matrix()).amax() < 1e-8);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MllrTransform::new(DMatrix::zeros(2, 2)).is_err());
        let g = model(false);
        assert!(apply_mllr_means(&g, &MllrTransform::identity(3)).is_err());
        let f = FeatureMatrix::from_rows(&[vec![0.0; 3]]).unwrap();
        assert!(estimate_global_mllr_mean(&g, &f).is_err());
    }
}
