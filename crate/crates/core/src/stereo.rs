//! Transform estimation from frame-aligned clean/noisy pairs.
//!
//! Every estimator starts from the same posterior-weighted moments: the
//! noisy GMM supplies `p(m | y_n)`, and those alignments are reused for the
//! clean counterpart `x_n`. The estimators differ only in how a mixture's
//! matrix is formed from the moments:
//!
//! | kind        | matrix                         |
//! |-------------|--------------------------------|
//! | `Splice`    | `Σ_xy Σ_y⁻¹`                   |
//! | `MSplice`   | `Σ_x^{½} Σ_y^{-½}`             |
//! | `Diagonal`  | `diag(σ_xy,c / σ²_y,c)`        |
//! | `BiasOnly`  | `I`                            |
//!
//! and the bias is always `μ_x − M μ_y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{covariance_floor, Gmm};
use crate::linalg::{self, symmetrize};
use crate::parallel::map_chunks;
use crate::transform::{MixtureFit, PiecewiseTransform, TransformKind};

/// Posteriors below this are zeroed (and the row renormalised) before
/// accumulation.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Clean and noisy frames, row `n` of one being the counterpart of row `n`
/// of the other.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoDataset {
    clean: FeatureMatrix,
    noisy: FeatureMatrix,
}

impl StereoDataset {
    pub fn new(clean: FeatureMatrix, noisy: FeatureMatrix) -> Result<Self> {
        if clean.n_frames() != noisy.n_frames() || clean.dim() != noisy.dim() {
            return Err(Error::usage(format!(
                "stereo sides differ in shape: clean {}x{}, noisy {}x{}",
                clean.n_frames(),
                clean.dim(),
                noisy.n_frames(),
                noisy.dim()
            )));
        }
        Ok(Self { clean, noisy })
    }

    pub fn clean(&self) -> &FeatureMatrix {
        &self.clean
    }

    pub fn noisy(&self) -> &FeatureMatrix {
        &self.noisy
    }

    pub fn n_frames(&self) -> usize {
        self.clean.n_frames()
    }

    pub fn dim(&self) -> usize {
        self.clean.dim()
    }
}

/// Whether second moments are taken about the weighted means or about zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentKind {
    /// `Σ p (x − μ_x)(y − μ_y)ᵀ / Σ p`.
    #[default]
    Central,
    /// `Σ p x yᵀ / Σ p`, kept for comparison with the uncentred formula.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EstimateOptions {
    pub moments: MomentKind,
}

/// Per-mixture posterior-weighted statistics of a stereo set.
#[derive(Debug, Clone)]
pub struct WeightedMoments {
    pub kind: MomentKind,
    /// `Γ_m = Σ_n p(m | y_n)`.
    pub occupancy: Vec<f64>,
    pub mean_x: Vec<DVector<f64>>,
    pub mean_y: Vec<DVector<f64>>,
    /// Floored at `floor_x`.
    pub cov_x: Vec<DMatrix<f64>>,
    /// Floored at `floor_y`.
    pub cov_y: Vec<DMatrix<f64>>,
    pub cov_xy: Vec<DMatrix<f64>>,
    /// Whether flooring had to lift an eigenvalue of `cov_x[m]`.
    pub floored_x: Vec<bool>,
    pub floored_y: Vec<bool>,
    pub floor_x: f64,
    pub floor_y: f64,
}

impl WeightedMoments {
    pub fn n_mixtures(&self) -> usize {
        self.occupancy.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_x[0].len()
    }

    /// Mixtures whose occupancy is below the dimension, for which a full
    /// matrix cannot be estimated.
    pub fn low_occupancy(&self) -> Vec<usize> {
        let d = self.dim() as f64;
        (0..self.n_mixtures()).filter(|m| self.occupancy[*m] < d).collect()
    }
}

/// Posteriors with entries under [`POSTERIOR_FLOOR`] zeroed, rows renormalised.
pub fn floored_posteriors(gmm: &Gmm, frames: &FeatureMatrix) -> Result<DMatrix<f64>> {
    let mut post = gmm.posteriors(frames)?;
    for mut row in post.row_iter_mut() {
        let mut s = 0.0;
        for v in row.iter_mut() {
            if *v < POSTERIOR_FLOOR {
                *v = 0.0;
            }
            s += *v;
        }
        row /= s;
    }
    Ok(post)
}

pub fn accumulate_moments(stereo: &StereoDataset, noisy_gmm: &Gmm) -> Result<WeightedMoments> {
    accumulate_moments_with(stereo, noisy_gmm, MomentKind::Central)
}

pub fn accumulate_moments_with(stereo: &StereoDataset, noisy_gmm: &Gmm, kind: MomentKind) -> Result<WeightedMoments> {
    let post = floored_posteriors(noisy_gmm, stereo.noisy())?;
    moments_from_posteriors(stereo, &post, noisy_gmm, kind)
}

fn weighted_cross(a: &crate::features::RowsView<'_>, b: &crate::features::RowsView<'_>, w: &[f64], ca: &DVector<f64>, cb: &DVector<f64>) -> DMatrix<f64> {
    // Σ_n w_n (a_n − ca)(b_n − cb)ᵀ
    let mut ra = a.clone_owned();
    for ((mut row, wn), _) in ra.row_iter_mut().zip(w).zip(0..) {
        row -= ca.transpose();
        row *= *wn;
    }
    let mut rb = b.clone_owned();
    for mut row in rb.row_iter_mut() {
        row -= cb.transpose();
    }
    ra.transpose() * rb
}

pub(crate) fn moments_from_posteriors(
    stereo: &StereoDataset,
    post: &DMatrix<f64>,
    noisy_gmm: &Gmm,
    kind: MomentKind,
) -> Result<WeightedMoments> {
    let (n, d, m) = (stereo.n_frames(), stereo.dim(), post.ncols());
    if noisy_gmm.dim() != d {
        return Err(Error::usage(format!(
            "stereo dimension {d} does not match model dimension {}",
            noisy_gmm.dim()
        )));
    }
    if post.nrows() != n {
        return Err(Error::usage("posterior rows must match frame count"));
    }

    // pass 1: occupancies and weighted sums
    let parts = map_chunks(n, |s, l| {
        let p = post.rows(s, l);
        let occ: Vec<f64> = p.column_iter().map(|c| c.sum()).collect();
        let sx = stereo.clean().rows_view(s, l).transpose() * p;
        let sy = stereo.noisy().rows_view(s, l).transpose() * p;
        (occ, sx, sy)
    });
    let mut occupancy = vec![0.0; m];
    let mut sum_x = DMatrix::zeros(d, m);
    let mut sum_y = DMatrix::zeros(d, m);
    for (occ, sx, sy) in parts {
        for k in 0..m {
            occupancy[k] += occ[k];
        }
        sum_x += sx;
        sum_y += sy;
    }
    let mut mean_x = Vec::with_capacity(m);
    let mut mean_y = Vec::with_capacity(m);
    for k in 0..m {
        if occupancy[k] > 0.0 {
            mean_x.push(sum_x.column(k) / occupancy[k]);
            mean_y.push(sum_y.column(k) / occupancy[k]);
        } else {
            // no evidence: treat the mixture as an unmoved noisy component
            mean_x.push(noisy_gmm.component(k).mean().clone());
            mean_y.push(noisy_gmm.component(k).mean().clone());
        }
    }

    // pass 2: second moments about the means (or about zero for Raw)
    let zero = DVector::zeros(d);
    let (cx, cy): (Vec<&DVector<f64>>, Vec<&DVector<f64>>) = match kind {
        MomentKind::Central => (mean_x.iter().collect(), mean_y.iter().collect()),
        MomentKind::Raw => (vec![&zero; m], vec![&zero; m]),
    };
    let parts = map_chunks(n, |s, l| {
        let x = stereo.clean().rows_view(s, l);
        let y = stereo.noisy().rows_view(s, l);
        (0..m)
            .map(|k| {
                let w: Vec<f64> = post.view((s, k), (l, 1)).iter().copied().collect();
                if w.iter().all(|v| *v == 0.0) {
                    return None;
                }
                Some((
                    weighted_cross(&x, &x, &w, cx[k], cx[k]),
                    weighted_cross(&y, &y, &w, cy[k], cy[k]),
                    weighted_cross(&x, &y, &w, cx[k], cy[k]),
                ))
            })
            .collect::<Vec<_>>()
    });
    let mut sxx = vec![DMatrix::zeros(d, d); m];
    let mut syy = vec![DMatrix::zeros(d, d); m];
    let mut sxy = vec![DMatrix::zeros(d, d); m];
    for part in parts {
        for (k, entry) in part.into_iter().enumerate() {
            if let Some((a, b, c)) = entry {
                sxx[k] += a;
                syy[k] += b;
                sxy[k] += c;
            }
        }
    }

    let floor_x = covariance_floor(stereo.clean());
    let floor_y = covariance_floor(stereo.noisy());
    let mut out = WeightedMoments {
        kind,
        occupancy,
        mean_x,
        mean_y,
        cov_x: Vec::with_capacity(m),
        cov_y: Vec::with_capacity(m),
        cov_xy: Vec::with_capacity(m),
        floored_x: Vec::with_capacity(m),
        floored_y: Vec::with_capacity(m),
        floor_x,
        floor_y,
    };
    for k in 0..m {
        let g = out.occupancy[k];
        let scale = if g > 0.0 { 1.0 / g } else { 0.0 };
        let mut vx = &sxx[k] * scale;
        let mut vy = &syy[k] * scale;
        symmetrize(&mut vx);
        symmetrize(&mut vy);
        let (vx, fx) = linalg::floor_eigenvalues(&vx, floor_x);
        let (vy, fy) = linalg::floor_eigenvalues(&vy, floor_y);
        out.cov_x.push(vx);
        out.cov_y.push(vy);
        out.cov_xy.push(&sxy[k] * scale);
        out.floored_x.push(fx);
        out.floored_y.push(fy);
    }
    Ok(out)
}

/// `C = Σ_x^{½} Σ_y^{-½}` with symmetric roots.
pub fn whitening_matrix(cov_x: &DMatrix<f64>, cov_y: &DMatrix<f64>, floor_x: f64, floor_y: f64) -> DMatrix<f64> {
    linalg::sqrtm_sym(cov_x, floor_x) * linalg::inv_sqrtm_sym(cov_y, floor_y)
}

/// Build a transform of `kind` from already accumulated moments.
pub fn transform_from_moments(
    kind: TransformKind,
    moments: &WeightedMoments,
    alignment_model: String,
) -> Result<PiecewiseTransform> {
    let (m, d) = (moments.n_mixtures(), moments.dim());
    let mut matrices = Vec::with_capacity(m);
    let mut biases = Vec::with_capacity(m);
    let mut fits = Vec::with_capacity(m);
    for k in 0..m {
        let (mx, my) = (&moments.mean_x[k], &moments.mean_y[k]);
        let gamma = moments.occupancy[k];
        let fit = if gamma < 1.0 {
            MixtureFit::Identity
        } else if kind == TransformKind::BiasOnly {
            MixtureFit::Full
        } else if gamma < d as f64 {
            log::warn!("mixture {k}: occupancy {gamma:.3} below dimension {d}, using bias-only");
            MixtureFit::BiasOnly
        } else if moments.floored_y[k] || (kind == TransformKind::MSplice && moments.floored_x[k]) {
            log::warn!("mixture {k}: covariance is rank deficient after flooring, using bias-only");
            MixtureFit::BiasOnly
        } else {
            MixtureFit::Full
        };
        let mat = match (fit, kind) {
            (MixtureFit::Identity | MixtureFit::BiasOnly, _) | (_, TransformKind::BiasOnly) => DMatrix::identity(d, d),
            (MixtureFit::Full, TransformKind::Splice) => {
                linalg::solve_right_spd(&moments.cov_xy[k], &moments.cov_y[k])?
            }
            (MixtureFit::Full, TransformKind::MSplice) => {
                whitening_matrix(&moments.cov_x[k], &moments.cov_y[k], moments.floor_x, moments.floor_y)
            }
            (MixtureFit::Full, TransformKind::Diagonal) => DMatrix::from_diagonal(&DVector::from_fn(d, |c, _| {
                moments.cov_xy[k][(c, c)] / moments.cov_y[k][(c, c)]
            })),
        };
        let bias = match fit {
            MixtureFit::Identity => DVector::zeros(d),
            _ => mx - &mat * my,
        };
        matrices.push(mat);
        biases.push(bias);
        fits.push(fit);
    }
    PiecewiseTransform::new(kind, matrices, biases, moments.mean_x.clone(), fits, alignment_model)
}

pub fn estimate(
    kind: TransformKind,
    stereo: &StereoDataset,
    noisy_gmm: &Gmm,
    opts: &EstimateOptions,
) -> Result<PiecewiseTransform> {
    let moments = accumulate_moments_with(stereo, noisy_gmm, opts.moments)?;
    transform_from_moments(kind, &moments, noisy_gmm.fingerprint())
}

/// Conventional SPLICE: `A_m = Σ_xy,m Σ_y,m⁻¹`, `b_m = μ_x,m − A_m μ_y,m`.
pub fn estimate_splice(stereo: &StereoDataset, noisy_gmm: &Gmm) -> Result<PiecewiseTransform> {
    estimate(TransformKind::Splice, stereo, noisy_gmm, &EstimateOptions::default())
}

/// M-SPLICE: `C_m = Σ_x,m^{½} Σ_y,m^{-½}`, `d_m = μ_x,m − C_m μ_y,m`.
pub fn estimate_msplice(stereo: &StereoDataset, noisy_gmm: &Gmm) -> Result<PiecewiseTransform> {
    estimate(TransformKind::MSplice, stereo, noisy_gmm, &EstimateOptions::default())
}

pub fn estimate_bias_only(stereo: &StereoDataset, noisy_gmm: &Gmm) -> Result<PiecewiseTransform> {
    estimate(TransformKind::BiasOnly, stereo, noisy_gmm, &EstimateOptions::default())
}

pub fn estimate_diagonal(stereo: &StereoDataset, noisy_gmm: &Gmm) -> Result<PiecewiseTransform> {
    estimate(TransformKind::Diagonal, stereo, noisy_gmm, &EstimateOptions::default())
}
