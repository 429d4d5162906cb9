//! Run-time bias re-estimation for an unseen test condition.
//!
//! The noisy GMM's means are moved onto a batch of test frames with one
//! global MLLR transform, and each bias is recomputed against the moved mean:
//! `d_m^(a) = μ_x,m − M_m μ_y,m^(a)`. The matrices are never touched and no
//! recognition pass is needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::Gmm;
use crate::mllr::{apply_mllr_means, estimate_global_mllr_mean_with, MllrOptions, MllrTransform};
use crate::transform::{blend, PiecewiseTransform};

/// A base transform whose biases have been re-estimated for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedTransform {
    base: PiecewiseTransform,
    adapted_biases: Vec<DVector<f64>>,
    mllr: MllrTransform,
    condition: String,
}

impl AdaptedTransform {
    pub fn new(
        base: PiecewiseTransform,
        adapted_biases: Vec<DVector<f64>>,
        mllr: MllrTransform,
        condition: String,
    ) -> Result<Self> {
        if adapted_biases.len() != base.n_mixtures() || adapted_biases.iter().any(|b| b.len() != base.dim()) {
            return Err(Error::usage("one adapted bias of the transform's dimension per mixture"));
        }
        if mllr.dim() != base.dim() {
            return Err(Error::usage("MLLR transform dimension does not match"));
        }
        if adapted_biases.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::numerical("adapted bias is not finite"));
        }
        Ok(Self { base, adapted_biases, mllr, condition })
    }

    pub fn base(&self) -> &PiecewiseTransform {
        &self.base
    }

    /// The base transform's matrices, shared unchanged.
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        self.base.matrices()
    }

    pub fn adapted_biases(&self) -> &[DVector<f64>] {
        &self.adapted_biases
    }

    pub fn mllr(&self) -> &MllrTransform {
        &self.mllr
    }

    pub fn condition(&self) -> &str {
        &self.condition
    }

    /// A plain transform with the adapted biases in place of the base ones.
    pub fn to_transform(&self) -> PiecewiseTransform {
        PiecewiseTransform::new(
            self.base.kind(),
            self.base.matrices().to_vec(),
            self.adapted_biases.clone(),
            self.base.clean_means().to_vec(),
            self.base.fits().to_vec(),
            self.base.alignment_model().to_string(),
        )
        .expect("shape checked at construction")
    }

    /// The noisy model with means replaced by their adapted values.
    pub fn adapted_gmm(&self, noisy_gmm: &Gmm) -> Result<Gmm> {
        apply_mllr_means(noisy_gmm, &self.mllr)
    }
}

/// Which model scores the enhancement posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosteriorModel {
    /// The unadapted noisy GMM the transform was trained against.
    #[default]
    Original,
    /// The MLLR-adapted noisy GMM.
    Adapted,
}

/// Estimate a global MLLR mean transform of `noisy_gmm` on `test_frames`
/// and recompute every bias against the adapted means.
pub fn adapt_runtime(
    base: &PiecewiseTransform,
    noisy_gmm: &Gmm,
    test_frames: &FeatureMatrix,
    condition: &str,
) -> Result<AdaptedTransform> {
    adapt_runtime_with(base, noisy_gmm, test_frames, condition, &MllrOptions::default())
}

pub fn adapt_runtime_with(
    base: &PiecewiseTransform,
    noisy_gmm: &Gmm,
    test_frames: &FeatureMatrix,
    condition: &str,
    opts: &MllrOptions,
) -> Result<AdaptedTransform> {
    base.check_alignment(noisy_gmm)?;
    let est = estimate_global_mllr_mean_with(noisy_gmm, test_frames, opts)?;
    let biases = adapted_biases(base, noisy_gmm, &est.transform);
    AdaptedTransform::new(base.clone(), biases, est.transform, condition.to_string())
}

/// `μ_x,m − M_m (W ξ_m)` for every mixture.
pub fn adapted_biases(base: &PiecewiseTransform, noisy_gmm: &Gmm, w: &MllrTransform) -> Vec<DVector<f64>> {
    base.clean_means()
        .iter()
        .zip(base.matrices())
        .zip(noisy_gmm.components())
        .map(|((mx, mat), c)| mx - mat * w.apply(c.mean()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedEnhancement {
    pub frames: FeatureMatrix,
    /// Set when the frames were labelled with a condition other than the
    /// one the transform was adapted to: `(transform's, frames')`.
    pub condition_mismatch: Option<(String, String)>,
}

/// `x̂ = Σ_m p(m|y) (M_m y + d_m^(a))`.
///
/// `frames_condition` labels the frames; a label different from the
/// transform's condition is allowed but reported.
pub fn enhance_adapted(
    adapted: &AdaptedTransform,
    noisy_gmm: &Gmm,
    frames: &FeatureMatrix,
    frames_condition: Option<&str>,
    posterior_model: PosteriorModel,
) -> Result<AdaptedEnhancement> {
    adapted.base.check_alignment(noisy_gmm)?;
    let condition_mismatch = match frames_condition {
        Some(tag) if tag != adapted.condition => {
            log::warn!(
                "transform adapted to condition '{}' applied to frames of condition '{tag}'",
                adapted.condition
            );
            Some((adapted.condition.clone(), tag.to_string()))
        }
        _ => None,
    };
    let post = match posterior_model {
        PosteriorModel::Original => noisy_gmm.posteriors(frames)?,
        PosteriorModel::Adapted => adapted.adapted_gmm(noisy_gmm)?.posteriors(frames)?,
    };
    let frames = blend(adapted.matrices(), &adapted.adapted_biases, &post, frames)?;
    Ok(AdaptedEnhancement { frames, condition_mismatch })
}
