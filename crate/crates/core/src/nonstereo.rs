//! Transform estimation without stereo pairs.
//!
//! A noisy GMM is trained on noisy frames; its means are moved onto the clean
//! frames with one global MLLR transform, and a few EM iterations on the
//! clean frames refine every parameter. None of these stages reorders
//! components, so clean mixture `i` stays paired with noisy mixture `i` and a
//! whitening transform can be estimated for each pair.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{covariance_floor, fit_em, fit_em_from, CovarianceMode, EmFit, EmOptions, Gmm};
use crate::mllr::{apply_mllr_means, estimate_global_mllr_mean_with, MllrEstimate, MllrOptions};
use crate::stereo::whitening_matrix;
use crate::transform::{MixtureFit, PiecewiseTransform, TransformKind};

/// Minimum number of EM refinement iterations on the clean frames.
pub const MIN_REFINE_ITERS: usize = 3;

/// Output of [`build_clean_gmm`].
#[derive(Debug, Clone)]
pub struct CleanGmm {
    pub gmm: Gmm,
    pub mllr: MllrEstimate,
    /// The MLLR-adapted model before refinement.
    pub adapted: Gmm,
    pub refinement: EmFit,
}

/// Noisy GMM → global MLLR mean adaptation → `em_iters` EM iterations on
/// the clean frames. Component order is preserved end to end.
pub fn build_clean_gmm(noisy_gmm: &Gmm, clean_frames: &FeatureMatrix, em_iters: usize) -> Result<CleanGmm> {
    build_clean_gmm_with(noisy_gmm, clean_frames, em_iters, &MllrOptions::default())
}

pub fn build_clean_gmm_with(
    noisy_gmm: &Gmm,
    clean_frames: &FeatureMatrix,
    em_iters: usize,
    mllr: &MllrOptions,
) -> Result<CleanGmm> {
    if em_iters < MIN_REFINE_ITERS {
        return Err(Error::usage(format!(
            "clean GMM refinement needs at least {MIN_REFINE_ITERS} EM iterations, got {em_iters}"
        )));
    }
    let est = estimate_global_mllr_mean_with(noisy_gmm, clean_frames, mllr)?;
    let adapted = apply_mllr_means(noisy_gmm, &est.transform)?;
    let refinement = fit_em_from(&adapted, clean_frames, em_iters)?;
    Ok(CleanGmm { gmm: refinement.gmm.clone(), mllr: est, adapted, refinement })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonStereoOptions {
    pub mixtures: usize,
    /// EM iterations for the noisy GMM.
    pub em_iters: usize,
    /// EM iterations refining the MLLR-adapted clean GMM (≥ 3).
    pub refine_iters: usize,
    pub seed: u64,
    pub mode: CovarianceMode,
    pub mllr: MllrOptions,
}

impl NonStereoOptions {
    pub fn new(mixtures: usize, em_iters: usize, seed: u64) -> Self {
        Self {
            mixtures,
            em_iters,
            refine_iters: MIN_REFINE_ITERS,
            seed,
            mode: CovarianceMode::Full,
            mllr: MllrOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonStereoModel {
    pub transform: PiecewiseTransform,
    /// Alignment model for enhancement.
    pub noisy_gmm: Gmm,
    pub noisy_fit: EmFit,
    pub clean: CleanGmm,
}

/// Train M-SPLICE-style transforms from unpaired clean and noisy frames.
/// The two sets may differ in size.
pub fn estimate_nonstereo(
    noisy_frames: &FeatureMatrix,
    clean_frames: &FeatureMatrix,
    opts: &NonStereoOptions,
) -> Result<NonStereoModel> {
    if noisy_frames.dim() != clean_frames.dim() {
        return Err(Error::usage(format!(
            "clean frames have {} dims, noisy frames {}",
            clean_frames.dim(),
            noisy_frames.dim()
        )));
    }
    let em = EmOptions::new(opts.mixtures, opts.em_iters, opts.seed).mode(opts.mode);
    let noisy_fit = fit_em(noisy_frames, &em)?;
    let noisy_gmm = noisy_fit.gmm.clone();
    let clean = build_clean_gmm_with(&noisy_gmm, clean_frames, opts.refine_iters, &opts.mllr)?;
    let transform = corresponded_transform(
        &noisy_gmm,
        &clean.gmm,
        covariance_floor(noisy_frames),
        covariance_floor(clean_frames),
        clean_frames.n_frames(),
    )?;
    Ok(NonStereoModel { transform, noisy_gmm, noisy_fit, clean })
}

/// `C_m = Σ_x,m^{½} Σ_y,m^{-½}`, `d_m = μ_x,m − C_m μ_y,m` between
/// component `m` of two mixture-corresponded GMMs.
pub fn corresponded_transform(
    noisy_gmm: &Gmm,
    clean_gmm: &Gmm,
    floor_y: f64,
    floor_x: f64,
    clean_frames: usize,
) -> Result<PiecewiseTransform> {
    if noisy_gmm.n_mixtures() != clean_gmm.n_mixtures() || noisy_gmm.dim() != clean_gmm.dim() {
        return Err(Error::usage("clean and noisy GMMs must have the same shape"));
    }
    let d = noisy_gmm.dim();
    let mut matrices = Vec::new();
    let mut biases = Vec::new();
    let mut fits = Vec::new();
    for (k, (ny, cx)) in noisy_gmm.components().iter().zip(clean_gmm.components()).enumerate() {
        let occupancy = clean_gmm.weights()[k] * clean_frames as f64;
        let cov_x = cx.covariance().to_dense();
        let cov_y = ny.covariance().to_dense();
        let at_floor = |c: &DMatrix<f64>, f: f64| crate::linalg::min_eigenvalue(c) <= f * (1.0 + 1e-9);
        let fit = if occupancy < 1.0 {
            MixtureFit::Identity
        } else if occupancy < d as f64 || at_floor(&cov_x, floor_x) || at_floor(&cov_y, floor_y) {
            log::warn!("mixture {k}: insufficient or degenerate clean statistics, using bias-only");
            MixtureFit::BiasOnly
        } else {
            MixtureFit::Full
        };
        let mat = match fit {
            MixtureFit::Full => whitening_matrix(&cov_x, &cov_y, floor_x, floor_y),
            _ => DMatrix::identity(d, d),
        };
        let bias = match fit {
            MixtureFit::Identity => DVector::zeros(d),
            _ => cx.mean() - &mat * ny.mean(),
        };
        matrices.push(mat);
        biases.push(bias);
        fits.push(fit);
    }
    PiecewiseTransform::new(
        TransformKind::MSplice,
        matrices,
        biases,
        clean_gmm.means(),
        fits,
        noisy_gmm.fingerprint(),
    )
}
