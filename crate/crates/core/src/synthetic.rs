//! Ground-truth corpora.
//!
//! Clean frames are drawn from a random full-covariance GMM with
//! well-separated means. Each frame is then pushed through its generating
//! mixture's affine channel, `y = G_m x + h_m + ε` with
//! `ε ~ N(0, residual_sigma² I)`, so that the exact noisy-to-clean map of
//! every mixture is known: `(G_m⁻¹, −G_m⁻¹ h_m)`.
//!
//! Specs are written in TOML:
//!
//! ```toml
//! d = 13
//! m = 8
//! separation = 10.0
//! residual_sigma = 0.0
//! n_frames = 50000
//! seed = 7
//! frames_per_utterance = 1000   # only used when writing a corpus to disk
//!
//! [channel]
//! kind = "random"   # or "identity", or "explicit" with `matrices` / `offsets`
//! spread = 0.2      # eigenvalues of the shared matrix lie in [1 - spread, 1 + spread]
//! offset = 3.0      # scale of the shared offset
//! jitter = 0.05     # per-mixture perturbation of both
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correspondence::max_weight_assignment;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::{sample_labelled, Gaussian, Gmm};
use crate::model_io::OracleMaps;
use crate::stereo::StereoDataset;
use crate::transform::{MixtureFit, PiecewiseTransform, TransformKind};

/// Largest accepted condition number of a channel matrix.
pub const MAX_CONDITION: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    /// `G = I`, `h = 0`.
    Identity,
    /// A shared symmetric positive-definite matrix and offset, each
    /// perturbed per mixture.
    Random {
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_offset")]
        offset: f64,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    /// One `d × d` matrix (list of rows) and one offset per mixture.
    Explicit { matrices: Vec<Vec<Vec<f64>>>, offsets: Vec<Vec<f64>> },
}

fn default_spread() -> f64 {
    0.2
}
fn default_offset() -> f64 {
    3.0
}
fn default_jitter() -> f64 {
    0.05
}
fn default_fpu() -> usize {
    1000
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec::Random { spread: default_spread(), offset: default_offset(), jitter: default_jitter() }
    }
}

/// Keys missing from a TOML spec take their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub m: usize,
    /// Minimum distance between clean means, in units of the (roughly
    /// unit) component standard deviation.
    pub separation: f64,
    pub residual_sigma: f64,
    pub n_frames: usize,
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default = "default_fpu")]
    pub frames_per_utterance: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d: 13,
            m: 8,
            separation: 10.0,
            residual_sigma: 0.0,
            n_frames: 50_000,
            seed: 7,
            channel: ChannelSpec::default(),
            frames_per_utterance: default_fpu(),
        }
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.at_path(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.n_frames == 0 || self.frames_per_utterance == 0 {
            return Err(Error::usage("d, m, n_frames and frames_per_utterance must be positive"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::usage(format!("separation must be positive, got {}", self.separation)));
        }
        if !(self.residual_sigma >= 0.0 && self.residual_sigma.is_finite()) {
            return Err(Error::usage(format!("residual_sigma must be non-negative, got {}", self.residual_sigma)));
        }
        match &self.channel {
            ChannelSpec::Identity => {}
            ChannelSpec::Random { spread, offset, jitter } => {
                if !(0.0..1.0).contains(spread) || !offset.is_finite() || !(*jitter >= 0.0 && *jitter < 0.5) {
                    return Err(Error::usage("random channel needs 0 ≤ spread < 1, finite offset, 0 ≤ jitter < 0.5"));
                }
            }
            ChannelSpec::Explicit { matrices, offsets } => {
                if matrices.len() != self.m || offsets.len() != self.m {
                    return Err(Error::usage(format!("explicit channel needs {} matrices and offsets", self.m)));
                }
                let square = matrices.iter().all(|g| g.len() == self.d && g.iter().all(|r| r.len() == self.d));
                if !square || offsets.iter().any(|h| h.len() != self.d) {
                    return Err(Error::usage(format!("explicit channel entries must be {0}×{0} and length {0}", self.d)));
                }
            }
        }
        Ok(())
    }
}

/// A generated stereo corpus with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub stereo: StereoDataset,
    pub clean_gmm: Gmm,
    /// Indexed by generating mixture.
    pub oracle: OracleMaps,
    /// Forward channel `(G_m, h_m)` per generating mixture.
    pub channel: Vec<(DMatrix<f64>, DVector<f64>)>,
    /// Generating mixture of every frame.
    pub labels: Vec<usize>,
}

impl SyntheticCorpus {
    /// The oracle maps re-indexed to the components of a trained noisy GMM
    /// and wrapped as a transform aligned with it.
    pub fn oracle_transform(&self, noisy_gmm: &Gmm) -> Result<PiecewiseTransform> {
        let perm = match_mixtures(noisy_gmm, &self.oracle.noisy_means)?;
        let clean_means = self.clean_gmm.means();
        PiecewiseTransform::new(
            TransformKind::Splice,
            perm.iter().map(|&g| self.oracle.matrices[g].clone()).collect(),
            perm.iter().map(|&g| self.oracle.biases[g].clone()).collect(),
            perm.iter().map(|&g| clean_means[g].clone()).collect(),
            vec![MixtureFit::Full; perm.len()],
            noisy_gmm.fingerprint(),
        )
    }
}

/// For each component of `trained`, the index of the reference mean it
/// stands for: the assignment minimising total squared mean distance.
pub fn match_mixtures(trained: &Gmm, reference_means: &[DVector<f64>]) -> Result<Vec<usize>> {
    let m = trained.n_mixtures();
    if reference_means.len() != m {
        return Err(Error::usage(format!("{m} trained components but {} reference means", reference_means.len())));
    }
    let w = DMatrix::from_fn(m, m, |k, g| -(trained.component(k).mean() - &reference_means[g]).norm_squared());
    Ok(max_weight_assignment(&w))
}

fn condition_number(g: &DMatrix<f64>) -> f64 {
    let s = g.singular_values();
    let (lo, hi) = (s.min(), s.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, d, d).qr().q()
}

/// `Q diag(λ) Qᵀ` with `λ` uniform in `[lo, hi]`.
fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, d);
    let lambda = DVector::from_fn(d, |_, _| if hi > lo { rng.random_range(lo..=hi) } else { lo });
    let s = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    (&s + s.transpose()) * 0.5
}

fn clean_model(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Gmm> {
    let (d, m) = (spec.d, spec.m);
    // Draw from a cloud wide enough that rejection rarely triggers.
    let scale = spec.separation * (m as f64).sqrt().max(1.0) / (d as f64).sqrt().max(1.0);
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut attempts = 0;
    while means.len() < m {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::usage("could not place means at the requested separation"));
        }
        let c = gaussian_vector(rng, d) * scale;
        if means.iter().all(|p| (p - &c).norm() >= spec.separation) {
            means.push(c);
        }
    }
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[..m - 1].iter().sum();
    weights[m - 1] = 1.0 - head;
    let components = means
        .into_iter()
        .map(|mu| Gaussian::full(mu, random_spd(rng, d, 0.5, 1.5)))
        .collect::<Result<Vec<_>>>()?;
    Gmm::new(weights, components)
}

fn channel(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let (d, m) = (spec.d, spec.m);
    match &spec.channel {
        ChannelSpec::Identity => vec![(DMatrix::identity(d, d), DVector::zeros(d)); m],
        ChannelSpec::Random { spread, offset, jitter } => {
            let g0 = random_spd(rng, d, 1.0 - spread, 1.0 + spread);
            let h0 = gaussian_vector(rng, d) * *offset;
            (0..m)
                .map(|_| {
                    let e = gaussian_matrix(rng, d, d) * (*jitter / (d as f64).sqrt());
                    let g = &g0 + (&e + e.transpose()) * 0.5;
                    let h = &h0 + gaussian_vector(rng, d) * (*jitter * offset.abs().max(1.0));
                    (g, h)
                })
                .collect()
        }
        ChannelSpec::Explicit { matrices, offsets } => matrices
            .iter()
            .zip(offsets)
            .map(|(g, h)| {
                let flat: Vec<f64> = g.iter().flatten().copied().collect();
                (DMatrix::from_row_slice(d, d, &flat), DVector::from_column_slice(h))
            })
            .collect(),
    }
}

/// Generate a corpus. Deterministic for a fixed spec.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean_gmm = clean_model(spec, &mut rng)?;
    let channel = channel(spec, &mut rng);

    let mut oracle = OracleMaps { noisy_means: vec![], matrices: vec![], biases: vec![] };
    for (k, (g, h)) in channel.iter().enumerate() {
        let cond = condition_number(g);
        if cond > MAX_CONDITION {
            return Err(Error::usage(format!("channel matrix {k} has condition number {cond:.3e} > {MAX_CONDITION:e}")));
        }
        let inv = g.clone().try_inverse().ok_or_else(|| Error::usage(format!("channel matrix {k} is singular")))?;
        oracle.noisy_means.push(g * clean_gmm.component(k).mean() + h);
        oracle.biases.push(-(&inv * h));
        oracle.matrices.push(inv);
    }

    let (clean, labels) = sample_labelled(&clean_gmm, spec.n_frames, rng.random())?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut noisy = DMatrix::zeros(spec.n_frames, spec.d);
    for (n, &k) in labels.iter().enumerate() {
        let (g, h) = &channel[k];
        let mut y = g * clean.frame(n) + h;
        if spec.residual_sigma > 0.0 {
            y += gaussian_vector(&mut noise_rng, spec.d) * spec.residual_sigma;
        }
        noisy.row_mut(n).copy_from(&y.transpose());
    }
    let stereo = StereoDataset::new(clean, FeatureMatrix::new(noisy)?)?;
    Ok(SyntheticCorpus { stereo, clean_gmm, oracle, channel, labels })
}

/// A random partition of `0..n` into `⌈n/2⌉` clean-side and `⌊n/2⌋`
/// noisy-side indices, each sorted.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
    let mut noisy = idx.split_off(n.div_ceil(2));
    idx.sort_unstable();
    noisy.sort_unstable();
    (idx, noisy)
}

/// Clean frames of one half and noisy frames of the other, so no pair
/// contributes to both sides.
pub fn split_unpaired(stereo: &StereoDataset, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if stereo.n_frames() < 2 {
        return Err(Error::usage("need at least two frames to split"));
    }
    let (c, y) = split_indices(stereo.n_frames(), seed);
    Ok((stereo.clean().select(&c)?, stereo.noisy().select(&y)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(channel: ChannelSpec, residual: f64) -> SyntheticSpec {
        SyntheticSpec { d: 3, m: 3, n_frames: 600, residual_sigma: residual, channel, ..Default::default() }
    }

    #[test]
    fn identity_channel_is_exact_copy() {
        let c = generate(&small(ChannelSpec::Identity, 0.0)).unwrap();
        assert_eq!(c.stereo.clean(), c.stereo.noisy());
    }

    #[test]
    fn same_seed_same_corpus() {
        let s = small(ChannelSpec::default(), 0.3);
        let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
        assert_eq!(a.stereo.noisy(), b.stereo.noisy());
        assert_eq!(a.labels, b.labels);
        let c = generate(&SyntheticSpec { seed: 8, ..s }).unwrap();
        assert_ne!(a.stereo.noisy(), c.stereo.noisy());
    }

    #[test]
    fn means_are_separated() {
        let c = generate(&SyntheticSpec { n_frames: 10, ..Default::default() }).unwrap();
        let mu = c.clean_gmm.means();
        for i in 0..mu.len() {
            for j in 0..i {
                assert!((&mu[i] - &mu[j]).norm() >= 10.0);
            }
        }
    }

    #[test]
    fn ill_conditioned_channel_rejected() {
        let mut s = small(
            ChannelSpec::Explicit {
                matrices: vec![vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1e-4]]; 3],
                offsets: vec![vec![0.0; 3]; 3],
            },
            0.0,
        );
        assert!(matches!(generate(&s), Err(Error::Usage(_))));
        s.separation = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn split_is_partition() {
        for n in [2usize, 3, 10, 101] {
            let (a, b) = split_indices(n, 5);
            assert_eq!((a.len(), b.len()), (n.div_ceil(2), n / 2));
            let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn toml_roundtrip() {
        let s = SyntheticSpec::default();
        assert_eq!(SyntheticSpec::from_toml(&s.to_toml()).unwrap(), s);
        let t = SyntheticSpec::from_toml("d = 2\nm = 1\nseparation = 4.0\nresidual_sigma = 0.0\nn_frames = 5\nseed = 1\n[channel]\nkind = \"identity\"\n").unwrap();
        assert_eq!(t.channel, ChannelSpec::Identity);
        assert!(SyntheticSpec::from_toml("d = 2\nbogus = 1\n").is_err());
    }
}
