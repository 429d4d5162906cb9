use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{covariance_floor, Covariance, CovarianceMode, Gaussian, Gmm};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{symmetrize, KahanSum};
use crate::parallel::map_chunks;

/// Greedy k-means++ seeding of the component means.
///
/// At each step `candidates` points are drawn with probability proportional
/// to their squared distance from the nearest chosen centre, and the one that
/// most reduces the total potential is kept. The whole seeding is repeated
/// `restarts` times and the lowest-potential centre set wins. Covariances
/// start at the global data covariance and weights start uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitPolicy {
    pub candidates: usize,
    pub restarts: usize,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self { candidates: 10, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub mixtures: usize,
    pub iters: usize,
    pub seed: u64,
    pub mode: CovarianceMode,
    pub init: InitPolicy,
}

impl EmOptions {
    pub fn new(mixtures: usize, iters: usize, seed: u64) -> Self {
        Self { mixtures, iters, seed, mode: CovarianceMode::Full, init: InitPolicy::default() }
    }

    pub fn mode(mut self, mode: CovarianceMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Total data log-likelihood before the first iteration and after each
    /// one; `iters + 1` entries.
    pub log_likelihood: Vec<f64>,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("trace is never empty")
    }

    /// Largest single-iteration drop in log-likelihood (0 when the trace is
    /// non-decreasing).
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// Fit an `M`-component mixture by EM from k-means++ seeds. Runs exactly
/// `iters` iterations; there is no tolerance-based early stop.
pub fn fit_em(frames: &FeatureMatrix, opts: &EmOptions) -> Result<EmFit> {
    if opts.mixtures == 0 {
        return Err(Error::usage("number of mixtures must be at least 1"));
    }
    if frames.n_frames() < opts.mixtures {
        return Err(Error::usage(format!(
            "{} frames cannot support {} mixtures",
            frames.n_frames(),
            opts.mixtures
        )));
    }
    if opts.iters == 0 {
        return Err(Error::usage("EM needs at least one iteration"));
    }
    let init = initial_model(frames, opts)?;
    run_em(init, frames, opts.iters)
}

/// EM started from an existing model. Component order is preserved so that
/// mixture `i` of the output is the refinement of mixture `i` of `init`.
pub fn fit_em_from(init: &Gmm, frames: &FeatureMatrix, iters: usize) -> Result<EmFit> {
    if init.dim() != frames.dim() {
        return Err(Error::usage(format!(
            "frame dimension {} does not match model dimension {}",
            frames.dim(),
            init.dim()
        )));
    }
    if iters == 0 {
        return Err(Error::usage("EM needs at least one iteration"));
    }
    run_em(init.clone(), frames, iters)
}

fn run_em(mut gmm: Gmm, frames: &FeatureMatrix, iters: usize) -> Result<EmFit> {
    let floor = covariance_floor(frames);
    let mut trace = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let stats = accumulate(&gmm, frames);
        trace.push(stats.log_likelihood);
        gmm = maximize(&gmm, &stats, floor)?;
    }
    trace.push(gmm.log_likelihood(frames)?);
    for (i, w) in trace.windows(2).enumerate() {
        if w[1] < w[0] - 1e-8 {
            log::warn!("EM log-likelihood decreased at iteration {}: {} -> {}", i + 1, w[0], w[1]);
        }
    }
    Ok(EmFit { gmm, log_likelihood: trace })
}

/// Zeroth, first and second order posterior-weighted statistics.
struct Stats {
    occupancy: Vec<f64>,
    first: Vec<DVector<f64>>,
    /// Full: `Σ γ y yᵀ`; diagonal: `Σ γ y²` stored on the diagonal.
    second: Vec<DMatrix<f64>>,
    log_likelihood: f64,
}

fn accumulate(gmm: &Gmm, frames: &FeatureMatrix) -> Stats {
    let m = gmm.n_mixtures();
    let d = gmm.dim();
    let diagonal = gmm.mode() == CovarianceMode::Diagonal;
    let parts = map_chunks(frames.n_frames(), |s, l| {
        let rows = frames.rows_view(s, l);
        let mut post = gmm.log_joint_rows(&rows);
        let ll = Gmm::normalize_rows(&mut post).value();
        let occupancy: Vec<f64> = post.column_iter().map(|c| c.sum()).collect();
        // D × M
        let first = rows.transpose() * &post;
        let second: Vec<DMatrix<f64>> = (0..m)
            .map(|k| {
                let g = post.column(k);
                if diagonal {
                    let mut v = DMatrix::zeros(d, d);
                    for c in 0..d {
                        v[(c, c)] = rows.column(c).iter().zip(g.iter()).map(|(y, p)| p * y * y).sum();
                    }
                    v
                } else {
                    let mut weighted = rows.clone_owned();
                    for (mut row, p) in weighted.row_iter_mut().zip(g.iter()) {
                        row *= *p;
                    }
                    weighted.transpose() * rows
                }
            })
            .collect();
        (occupancy, first, second, ll)
    });

    let mut stats = Stats {
        occupancy: vec![0.0; m],
        first: vec![DVector::zeros(d); m],
        second: vec![DMatrix::zeros(d, d); m],
        log_likelihood: 0.0,
    };
    let mut ll = KahanSum::default();
    for (occ, first, second, part_ll) in parts {
        for k in 0..m {
            stats.occupancy[k] += occ[k];
            stats.first[k] += first.column(k);
            stats.second[k] += &second[k];
        }
        ll.add(part_ll);
    }
    stats.log_likelihood = ll.value();
    stats
}

fn maximize(prev: &Gmm, stats: &Stats, floor: f64) -> Result<Gmm> {
    let total: f64 = stats.occupancy.iter().sum();
    let mut weights = Vec::with_capacity(prev.n_mixtures());
    let mut comps = Vec::with_capacity(prev.n_mixtures());
    for (k, old) in prev.components().iter().enumerate() {
        let gamma = stats.occupancy[k];
        weights.push(gamma / total);
        // an empty component keeps its parameters; its weight carries no mass
        if gamma <= f64::MIN_POSITIVE * 1e3 {
            comps.push(old.clone());
            continue;
        }
        let mean = &stats.first[k] / gamma;
        let cov = match old.mode() {
            CovarianceMode::Full => {
                let mut c = &stats.second[k] / gamma - &mean * mean.transpose();
                symmetrize(&mut c);
                Covariance::Full(c)
            }
            CovarianceMode::Diagonal => {
                Covariance::Diagonal(DVector::from_fn(mean.len(), |c, _| {
                    stats.second[k][(c, c)] / gamma - mean[c] * mean[c]
                }))
            }
        };
        comps.push(Gaussian::new(mean, cov.floored(floor))?);
    }
    Gmm::new(weights, comps)
}

fn initial_model(frames: &FeatureMatrix, opts: &EmOptions) -> Result<Gmm> {
    let floor = covariance_floor(frames);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centres = kmeans_pp(frames, opts.mixtures, opts.init, &mut rng);
    let global = frames.covariance();
    let cov = match opts.mode {
        CovarianceMode::Full => Covariance::Full(global),
        CovarianceMode::Diagonal => Covariance::Diagonal(global.diagonal()),
    }
    .floored(floor);
    let comps = centres
        .into_iter()
        .map(|i| Gaussian::new(frames.frame(i), cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    let m = comps.len();
    Gmm::new(vec![1.0 / m as f64; m], comps)
}

fn sq_dist_to(frames: &FeatureMatrix, centre: &DVector<f64>) -> Vec<f64> {
    frames.as_matrix().row_iter().map(|r| (r.transpose() - centre).norm_squared()).collect()
}

/// Returns frame indices of the chosen centres.
fn kmeans_pp(frames: &FeatureMatrix, k: usize, policy: InitPolicy, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = frames.n_frames();
    let candidates = policy.candidates.max(1);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..policy.restarts.max(1) {
        let first = rng.random_range(0..n);
        let mut chosen = vec![first];
        let mut nearest = sq_dist_to(frames, &frames.frame(first));
        for _ in 1..k {
            let potential: f64 = nearest.iter().sum();
            let mut pick: Option<(f64, usize, Vec<f64>)> = None;
            for _ in 0..candidates {
                let idx = if potential > 0.0 {
                    draw_proportional(&nearest, potential, rng)
                } else {
                    rng.random_range(0..n)
                };
                let d = sq_dist_to(frames, &frames.frame(idx));
                let updated: Vec<f64> = nearest.iter().zip(&d).map(|(a, b)| a.min(*b)).collect();
                let pot: f64 = updated.iter().sum();
                if pick.as_ref().is_none_or(|(p, _, _)| pot < *p) {
                    pick = Some((pot, idx, updated));
                }
            }
            let (_, idx, updated) = pick.expect("at least one candidate");
            chosen.push(idx);
            nearest = updated;
        }
        let pot: f64 = nearest.iter().sum();
        if best.as_ref().is_none_or(|(p, _)| pot < *p) {
            best = Some((pot, chosen));
        }
    }
    best.expect("at least one restart").1
}

fn draw_proportional(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc > target {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}
