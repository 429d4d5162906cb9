use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use splice_core::correspondence::from_posteriors;
use splice_core::gmm::covariance_floor;
use splice_core::io::{encode_htk, parse_htk, FeatureFile};
use splice_core::stereo::accumulate_moments_with;
use splice_core::synthetic::split_indices;
use splice_core::transform::enhance_with_posteriors;
use splice_core::{
    adapt_runtime, apply_mllr_means, cms, estimate_global_mllr_mean, estimate_msplice, estimate_splice, fit_em,
    sample, AssignmentMode, EmOptions, FeatureMatrix, Gaussian, Gmm, MomentKind, StereoDataset,
};

fn spd(d: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(d, d, &entries[..d * d]);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

/// A random full-covariance GMM: `m` components in `d` dimensions.
fn arb_gmm(max_m: usize, max_d: usize) -> impl Strategy<Value = Gmm> {
    (1..=max_m, 1..=max_d).prop_flat_map(|(m, d)| {
        (
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), m),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d * d), m),
        )
            .prop_map(move |(w, means, covs)| {
                let total: f64 = w.iter().sum();
                let comps = means
                    .iter()
                    .zip(&covs)
                    .map(|(mu, c)| Gaussian::full(DVector::from_column_slice(mu), spd(d, c)).unwrap())
                    .collect();
                Gmm::new(w.iter().map(|v| v / total).collect(), comps).unwrap()
            })
    })
}

fn arb_frames(d: usize, n: std::ops::Range<usize>, scale: f64) -> impl Strategy<Value = FeatureMatrix> {
    n.prop_flat_map(move |n| {
        prop::collection::vec(-scale..scale, n * d)
            .prop_map(move |v| FeatureMatrix::from_row_slice(n, d, &v).unwrap())
    })
}

fn gmm_and_frames(scale: f64) -> impl Strategy<Value = (Gmm, FeatureMatrix)> {
    arb_gmm(6, 4).prop_flat_map(move |g| {
        let d = g.dim();
        (Just(g), arb_frames(d, 1..40, scale))
    })
}

/// `log Σ_m π_m N(y; μ_m, Σ_m)` by direct summation with an explicit
/// inverse and determinant.
fn naive_log_density(gmm: &Gmm, y: &DVector<f64>) -> f64 {
    let d = gmm.dim() as f64;
    let mut sum = 0.0;
    for (c, w) in gmm.components().iter().zip(gmm.weights().iter()) {
        let cov = c.covariance().to_dense();
        let r = y - c.mean();
        let q = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[(0, 0)];
        sum += w * (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(d) * cov.determinant()).sqrt();
    }
    sum.ln()
}

/// Stereo data whose noisy side comes from `gmm` and whose clean side is a
/// fixed affine map of it plus small noise.
fn stereo_from(gmm: &Gmm, n: usize, seed: u64, mix: &[f64]) -> StereoDataset {
    let d = gmm.dim();
    let noisy = sample(gmm, n, seed).unwrap();
    let a = DMatrix::from_row_slice(d, d, &mix[..d * d]) * 0.3 + DMatrix::identity(d, d);
    let noise = sample(&Gmm::new(vec![1.0], vec![Gaussian::diagonal(DVector::zeros(d), DVector::from_element(d, 0.01)).unwrap()]).unwrap(), n, seed + 1).unwrap();
    let clean = noisy.as_matrix() * a.transpose() + noise.as_matrix();
    StereoDataset::new(FeatureMatrix::new(clean).unwrap(), noisy).unwrap()
}

fn gmm_stereo() -> impl Strategy<Value = (Gmm, StereoDataset)> {
    (arb_gmm(4, 3), 0u64..1000, prop::collection::vec(-1.0f64..1.0, 9))
        .prop_map(|(g, seed, mix)| {
            let s = stereo_from(&g, 400, seed, &mix);
            (g, s)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_rows_sum_to_one((gmm, frames) in gmm_and_frames(50.0)) {
        let post = gmm.posteriors(&frames).unwrap();
        for row in post.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn log_density_matches_direct_summation((gmm, frames) in gmm_and_frames(6.0)) {
        for y in frames.frames() {
            let fast = gmm.log_density(y.as_slice()).unwrap();
            let slow = naive_log_density(&gmm, &y);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn em_never_decreases_likelihood_and_respects_the_floor(
        (gmm, seed) in (arb_gmm(4, 3), 0u64..1000),
        m in 1usize..5,
    ) {
        let frames = sample(&gmm, 300, seed).unwrap();
        let fit = fit_em(&frames, &EmOptions::new(m, 6, seed)).unwrap();
        prop_assert_eq!(fit.log_likelihood.len(), 7);
        for w in fit.log_likelihood.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
        let floor = covariance_floor(&frames);
        for c in fit.gmm.components() {
            prop_assert!(c.covariance().min_eigenvalue() >= floor * (1.0 - 1e-9));
        }
    }

    #[test]
    fn htk_roundtrip_is_bit_exact(
        n in 1usize..20,
        d in 1usize..16,
        period in 1i32..1_000_000,
        seed in any::<u64>(),
    ) {
        // f32-representable values so the encoded body is exact
        let values: Vec<f64> = (0..n * d)
            .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 7) as u32 & 0x3fff_ffff) as f64)
            .collect();
        let file = FeatureFile {
            frames: FeatureMatrix::from_row_slice(n, d, &values).unwrap(),
            sample_period: period,
            param_kind: 6,
        };
        let bytes = encode_htk(&file).unwrap();
        let back = parse_htk(&bytes).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(encode_htk(&back).unwrap(), bytes);
    }

    #[test]
    fn cms_is_idempotent_and_centres(frames in arb_frames(5, 1..50, 100.0)) {
        let once = cms(&frames);
        let twice = cms(&once);
        prop_assert!((once.as_matrix() - twice.as_matrix()).amax() <= 1e-12);
        prop_assert!(once.column_means().amax() <= 1e-10);
    }

    #[test]
    fn splice_equals_weighted_least_squares((gmm, stereo) in gmm_stereo()) {
        let t = estimate_splice(&stereo, &gmm).unwrap();
        let post = splice_core::stereo::floored_posteriors(&gmm, stereo.noisy()).unwrap();
        let d = stereo.dim();
        for (k, fit) in t.fits().iter().enumerate() {
            if *fit != splice_core::MixtureFit::Full {
                continue;
            }
            // normal equations Σ p y'y'ᵀ W = Σ p y'xᵀ on augmented y' = [y; 1]
            let mut lhs = DMatrix::<f64>::zeros(d + 1, d + 1);
            let mut rhs = DMatrix::<f64>::zeros(d + 1, d);
            for i in 0..stereo.n_frames() {
                let p = post[(i, k)];
                let y = stereo.noisy().frame(i).push(1.0);
                let x = stereo.clean().frame(i);
                lhs += p * &y * y.transpose();
                rhs += p * &y * x.transpose();
            }
            let w = lhs.lu().solve(&rhs).unwrap().transpose();
            let mut got = t.matrices()[k].clone().insert_column(d, 0.0);
            got.column_mut(d).copy_from(&t.biases()[k]);
            prop_assert!((&got - &w).norm() <= 1e-6 * w.norm(), "mixture {k}: {got} vs {w}");
        }
    }

    #[test]
    fn msplice_whitens_every_mixture((gmm, stereo) in gmm_stereo()) {
        let t = estimate_msplice(&stereo, &gmm).unwrap();
        let mo = accumulate_moments_with(&stereo, &gmm, MomentKind::Central).unwrap();
        for (k, c) in t.matrices().iter().enumerate() {
            if t.fits()[k] == splice_core::MixtureFit::Full {
                let err = (c * &mo.cov_y[k] * c.transpose() - &mo.cov_x[k]).norm();
                prop_assert!(err <= 1e-8 * mo.cov_x[k].norm());
            }
        }
    }

    #[test]
    fn enhancement_with_frozen_posteriors_is_the_weighted_affine_map((gmm, stereo) in gmm_stereo()) {
        let t = estimate_splice(&stereo, &gmm).unwrap();
        let y = stereo.noisy();
        let post = gmm.posteriors(y).unwrap();
        let out = enhance_with_posteriors(&t, &post, y).unwrap();
        for i in (0..y.n_frames()).step_by(37) {
            let mut want = DVector::zeros(y.dim());
            for k in 0..gmm.n_mixtures() {
                want += post[(i, k)] * (&t.matrices()[k] * y.frame(i) + &t.biases()[k]);
            }
            prop_assert!((out.frame(i) - want).amax() <= 1e-10);
        }
    }

    #[test]
    fn mllr_never_lowers_adaptation_likelihood(
        (gmm, seed) in (arb_gmm(4, 3), 0u64..1000),
        shift in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let d = gmm.dim();
        let frames = sample(&gmm, 200, seed).unwrap();
        let shifted = FeatureMatrix::new(DMatrix::from_fn(frames.n_frames(), d, |i, j| frames.as_matrix()[(i, j)] + shift[j])).unwrap();
        let est = estimate_global_mllr_mean(&gmm, &shifted).unwrap();
        let before = gmm.log_likelihood(&shifted).unwrap();
        let after = apply_mllr_means(&gmm, &est.transform).unwrap().log_likelihood(&shifted).unwrap();
        prop_assert!(after >= before - 1e-8 * before.abs().max(1.0), "{before} -> {after}");
    }

    #[test]
    fn correspondence_mass_is_conserved((gmm, stereo) in gmm_stereo()) {
        let px = gmm.posteriors(stereo.clean()).unwrap();
        let py = gmm.posteriors(stereo.noisy()).unwrap();
        let n = stereo.n_frames() as f64;
        let soft = from_posteriors(&px, &py, AssignmentMode::Soft).unwrap();
        prop_assert!((soft.total() - n).abs() <= 1e-6);
        let hard = from_posteriors(&px, &py, AssignmentMode::Hard).unwrap();
        prop_assert_eq!(hard.total(), n);
    }

    #[test]
    fn adaptation_shares_the_base_matrices((gmm, stereo) in gmm_stereo()) {
        let base = estimate_msplice(&stereo, &gmm).unwrap();
        let adapted = adapt_runtime(&base, &gmm, stereo.noisy(), "c").unwrap();
        prop_assert_eq!(adapted.matrices(), base.matrices());
    }

    #[test]
    fn split_indices_partition(n in 1usize..500, seed in any::<u64>()) {
        let (a, b) = split_indices(n, seed);
        prop_assert_eq!(a.len(), n.div_ceil(2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn sampling_is_seeded_and_follows_the_weights() {
    let comps = (0..3)
        .map(|k| Gaussian::diagonal(DVector::from_element(2, 20.0 * k as f64), DVector::from_element(2, 1.0)).unwrap())
        .collect();
    let gmm = Gmm::new(vec![0.2, 0.5, 0.3], comps).unwrap();
    let n = 20_000;
    let a = sample(&gmm, n, 9).unwrap();
    assert_eq!(a, sample(&gmm, n, 9).unwrap());
    let labels = gmm.hard_assign(&a).unwrap();
    for (k, w) in gmm.weights().iter().enumerate() {
        let freq = labels.iter().filter(|l| **l == k).count() as f64 / n as f64;
        assert!((freq - w).abs() <= 5.0 * (w * (1.0 - w) / n as f64).sqrt(), "component {k}: {freq}");
    }
}

#[test]
fn posteriors_survive_far_outliers() {
    let gmm = Gmm::new(
        vec![0.5, 0.5],
        vec![
            Gaussian::full(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2)).unwrap(),
            Gaussian::full(DVector::from_vec(vec![4.0, 0.0]), DMatrix::identity(2, 2)).unwrap(),
        ],
    )
    .unwrap();
    let frames = FeatureMatrix::from_rows(&[vec![1e6, 0.0], vec![-1e6, 3.0]]).unwrap();
    let post = gmm.posteriors(&frames).unwrap();
    assert_relative_eq!(post[(0, 1)], 1.0);
    assert_relative_eq!(post[(1, 0)], 1.0);
}
