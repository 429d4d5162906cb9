//! Piecewise-linear compensation of noisy feature vectors.
//!
//! A GMM trained on noisy features softly partitions the feature space; each
//! mixture carries an affine map `x̂ = M_m y + d_m` toward the clean space and
//! enhancement blends the maps by posterior:
//!
//! ```text
//! x̂ = Σ_m p(m | y) (M_m y + d_m)
//! ```
//!
//! The maps come from one of four stereo estimators ([`stereo`]), from
//! unpaired clean and noisy data ([`nonstereo`]), and can be re-biased for a
//! new noise condition at run time ([`runtime`]).
//!
//! ```
//! use splice_core::{fit_em, enhance, estimate_msplice, EmOptions};
//! use splice_core::synthetic::{generate, SyntheticSpec};
//!
//! let spec = SyntheticSpec { d: 2, m: 2, n_frames: 2000, residual_sigma: 0.05, ..Default::default() };
//! let corpus = generate(&spec)?;
//! let noisy_gmm = fit_em(corpus.stereo.noisy(), &EmOptions::new(2, 20, 1))?.gmm;
//! let t = estimate_msplice(&corpus.stereo, &noisy_gmm)?;
//! let x_hat = enhance(&t, &noisy_gmm, corpus.stereo.noisy())?;
//! let before = corpus.stereo.noisy().mse(corpus.stereo.clean())?;
//! let after = x_hat.mse(corpus.stereo.clean())?;
//! assert!(after < 0.2 * before);
//! # Ok::<(), splice_core::Error>(())
//! ```

pub mod correspondence;
mod error;
pub mod features;
pub mod gmm;
pub mod io;
pub mod linalg;
pub mod mllr;
pub mod model_io;
pub mod nonstereo;
mod parallel;
pub mod runtime;
pub mod stereo;
pub mod synthetic;
pub mod transform;

pub use correspondence::{correspondence_matrix, AssignmentMode, CorrespondenceMatrix};
pub use error::{Error, ErrorClass, Result};
pub use features::{cms, FeatureMatrix};
pub use gmm::{fit_em, fit_em_from, sample, Covariance, CovarianceMode, EmFit, EmOptions, Gaussian, Gmm, InitPolicy};
pub use mllr::{apply_mllr_means, estimate_global_mllr_mean, MllrEstimate, MllrOptions, MllrTransform};
pub use nonstereo::{build_clean_gmm, estimate_nonstereo, CleanGmm, NonStereoModel, NonStereoOptions};
pub use runtime::{adapt_runtime, enhance_adapted, AdaptedEnhancement, AdaptedTransform, PosteriorModel};
pub use stereo::{
    accumulate_moments, estimate, estimate_bias_only, estimate_diagonal, estimate_msplice, estimate_splice,
    EstimateOptions, MomentKind, StereoDataset, WeightedMoments,
};
pub use transform::{enhance, MixtureFit, PiecewiseTransform, TransformKind};
