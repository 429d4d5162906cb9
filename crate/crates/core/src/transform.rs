//! Piecewise-linear transforms tied to an alignment model, and their
//! application to noisy frames.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::Gmm;
use crate::parallel::map_chunks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    /// MMSE regression matrix `A_m = Σ_xy Σ_y⁻¹`.
    Splice,
    /// Whitening-recolouring matrix `C_m = Σ_x^{½} Σ_y^{-½}`.
    MSplice,
    /// Per-dimension regression scales, no cross terms.
    Diagonal,
    /// Identity matrices, bias only.
    BiasOnly,
}

impl TransformKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Splice => "splice",
            TransformKind::MSplice => "msplice",
            TransformKind::Diagonal => "diagonal",
            TransformKind::BiasOnly => "bias_only",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "splice" => TransformKind::Splice,
            "msplice" => TransformKind::MSplice,
            "diagonal" | "diag" => TransformKind::Diagonal,
            "bias_only" | "bias" => TransformKind::BiasOnly,
            other => return Err(Error::usage(format!("unknown transform kind '{other}'"))),
        })
    }
}

/// How a mixture's transform was actually estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixtureFit {
    /// The estimator of the transform's kind.
    Full,
    /// Too little occupancy (or a singular covariance): identity matrix,
    /// mean-difference bias.
    BiasOnly,
    /// Essentially no occupancy: identity matrix, zero bias.
    Identity,
}

impl MixtureFit {
    pub fn as_str(self) -> &'static str {
        match self {
            MixtureFit::Full => "full",
            MixtureFit::BiasOnly => "bias_only",
            MixtureFit::Identity => "identity",
        }
    }
}

impl std::str::FromStr for MixtureFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => MixtureFit::Full,
            "bias_only" => MixtureFit::BiasOnly,
            "identity" => MixtureFit::Identity,
            other => return Err(Error::usage(format!("unknown mixture fit '{other}'"))),
        })
    }
}

/// `M` affine maps `y ↦ M_m y + c_m`, blended at run time by the posteriors
/// of the alignment model.
///
/// The clean-side means `μ_x,m` seen at training time are kept alongside
/// the maps; run-time adaptation recomputes the biases from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTransform {
    kind: TransformKind,
    matrices: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    clean_means: Vec<DVector<f64>>,
    fits: Vec<MixtureFit>,
    alignment_model: String,
}

impl PiecewiseTransform {
    pub fn new(
        kind: TransformKind,
        matrices: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        clean_means: Vec<DVector<f64>>,
        fits: Vec<MixtureFit>,
        alignment_model: String,
    ) -> Result<Self> {
        let m = matrices.len();
        if m == 0 {
            return Err(Error::usage("transform needs at least one mixture"));
        }
        if biases.len() != m || clean_means.len() != m || fits.len() != m {
            return Err(Error::usage("matrices, biases, clean means and fits must have one entry per mixture"));
        }
        let d = biases[0].len();
        for k in 0..m {
            if matrices[k].shape() != (d, d) || biases[k].len() != d || clean_means[k].len() != d {
                return Err(Error::usage(format!("mixture {k} has inconsistent dimensions")));
            }
            if matrices[k].iter().chain(biases[k].iter()).chain(clean_means[k].iter()).any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("mixture {k} has non-finite parameters")));
            }
            let mat = &matrices[k];
            let ok = match kind {
                TransformKind::BiasOnly => *mat == DMatrix::identity(d, d),
                TransformKind::Diagonal => (0..d).all(|r| (0..d).all(|c| r == c || mat[(r, c)] == 0.0)),
                _ => true,
            };
            if !ok {
                return Err(Error::usage(format!(
                    "mixture {k} matrix violates the structure of a {} transform",
                    kind.as_str()
                )));
            }
        }
        Ok(Self { kind, matrices, biases, clean_means, fits, alignment_model })
    }

    /// Identity map for every mixture of `gmm`.
    pub fn identity(gmm: &Gmm, kind: TransformKind) -> Self {
        let (m, d) = (gmm.n_mixtures(), gmm.dim());
        Self {
            kind,
            matrices: vec![DMatrix::identity(d, d); m],
            biases: vec![DVector::zeros(d); m],
            clean_means: gmm.means(),
            fits: vec![MixtureFit::Full; m],
            alignment_model: gmm.fingerprint(),
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn n_mixtures(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.biases[0].len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn clean_means(&self) -> &[DVector<f64>] {
        &self.clean_means
    }

    pub fn fits(&self) -> &[MixtureFit] {
        &self.fits
    }

    /// Fingerprint of the alignment GMM.
    pub fn alignment_model(&self) -> &str {
        &self.alignment_model
    }

    /// Error unless `gmm` is the model this transform was estimated against.
    pub fn check_alignment(&self, gmm: &Gmm) -> Result<()> {
        if gmm.n_mixtures() != self.n_mixtures() || gmm.dim() != self.dim() {
            return Err(Error::usage(format!(
                "alignment model is {}x{} but transform is {}x{}",
                gmm.n_mixtures(),
                gmm.dim(),
                self.n_mixtures(),
                self.dim()
            )));
        }
        let fp = gmm.fingerprint();
        if fp != self.alignment_model {
            return Err(Error::usage(format!(
                "alignment model fingerprint {fp} does not match transform's {}",
                self.alignment_model
            )));
        }
        Ok(())
    }
}

/// `x̂ = Σ_m p(m|y) (M_m y + c_m)` with the posteriors of `gmm`.
pub fn enhance(transform: &PiecewiseTransform, gmm: &Gmm, frames: &FeatureMatrix) -> Result<FeatureMatrix> {
    transform.check_alignment(gmm)?;
    let post = gmm.posteriors(frames)?;
    blend(transform.matrices(), transform.biases(), &post, frames)
}

/// Enhancement with caller-supplied posteriors (one row per frame). With the
/// posteriors frozen the output is affine in the frames.
pub fn enhance_with_posteriors(
    transform: &PiecewiseTransform,
    posteriors: &DMatrix<f64>,
    frames: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    blend(transform.matrices(), transform.biases(), posteriors, frames)
}

pub(crate) fn blend(
    matrices: &[DMatrix<f64>],
    biases: &[DVector<f64>],
    posteriors: &DMatrix<f64>,
    frames: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    let (n, d) = (frames.n_frames(), frames.dim());
    if posteriors.shape() != (n, matrices.len()) {
        return Err(Error::usage(format!(
            "posterior matrix is {:?}, expected ({n}, {})",
            posteriors.shape(),
            matrices.len()
        )));
    }
    if biases.first().map(|b| b.len()) != Some(d) {
        return Err(Error::usage(format!("transform dimension does not match frame dimension {d}")));
    }
    let blocks = map_chunks(n, |s, l| {
        let rows = frames.rows_view(s, l);
        let mut out = DMatrix::zeros(l, d);
        for (k, (mat, bias)) in matrices.iter().zip(biases).enumerate() {
            let p = posteriors.view((s, k), (l, 1));
            if p.iter().all(|v| *v == 0.0) {
                continue;
            }
            // rows · Mᵀ gives (M y_n)ᵀ per row
            let mut mapped = rows * mat.transpose();
            for (mut row, w) in mapped.row_iter_mut().zip(p.iter()) {
                row += bias.transpose();
                row *= *w;
            }
            out += mapped;
        }
        (s, out)
    });
    let mut data = DMatrix::zeros(n, d);
    for (s, b) in blocks {
        data.rows_mut(s, b.nrows()).copy_from(&b);
    }
    FeatureMatrix::new(data)
}
