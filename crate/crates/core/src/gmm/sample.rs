use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};

use super::{Covariance, Gmm};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Draw `n` i.i.d. frames. Deterministic for a fixed seed.
pub fn sample(gmm: &Gmm, n: usize, seed: u64) -> Result<FeatureMatrix> {
    sample_labelled(gmm, n, seed).map(|(f, _)| f)
}

/// As [`sample`], also returning the generating component of each frame.
pub fn sample_labelled(gmm: &Gmm, n: usize, seed: u64) -> Result<(FeatureMatrix, Vec<usize>)> {
    if n == 0 {
        return Err(Error::usage("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(gmm.weights().iter().copied())
        .map_err(|e| Error::usage(format!("invalid mixture weights: {e}")))?;
    let d = gmm.dim();
    let roots: Vec<DMatrix<f64>> = gmm
        .components()
        .iter()
        .map(|c| match c.covariance() {
            Covariance::Full(m) => m.clone().cholesky().map(|ch| ch.unpack()),
            Covariance::Diagonal(v) => Some(DMatrix::from_diagonal(&v.map(f64::sqrt))),
        })
        .collect::<Option<_>>()
        .ok_or_else(|| Error::numerical("covariance is not positive definite"))?;

    let mut data = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let m = pick.sample(&mut rng);
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let y = gmm.component(m).mean() + &roots[m] * z;
        data.row_mut(i).copy_from(&y.transpose());
        labels.push(m);
    }
    Ok((FeatureMatrix::new(data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::Gaussian;
    use nalgebra::dvector;

    #[test]
    fn sample_mean_within_clt_bound() {
        let g = Gmm::new(
            vec![1.0],
            vec![Gaussian::full(dvector![3.0, -2.0], DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0])).unwrap()],
        )
        .unwrap();
        let n = 10_000;
        let s = sample(&g, n, 42).unwrap();
        let mean = s.column_means();
        for (c, sigma2) in [4.0f64, 2.0].iter().enumerate() {
            assert!((mean[c] - g.component(0).mean()[c]).abs() <= 5.0 * sigma2.sqrt() / (n as f64).sqrt());
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let g = Gmm::new(
            vec![0.5, 0.5],
            vec![
                Gaussian::diagonal(dvector![0.0], dvector![1.0]).unwrap(),
                Gaussian::diagonal(dvector![5.0], dvector![2.0]).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(sample(&g, 100, 7).unwrap(), sample(&g, 100, 7).unwrap());
        assert_ne!(sample(&g, 100, 7).unwrap(), sample(&g, 100, 8).unwrap());
    }

    #[test]
    fn component_frequencies_match_weights() {
        let w = [0.2, 0.5, 0.3];
        let g = Gmm::new(
            w.to_vec(),
            (0..3).map(|i| Gaussian::diagonal(dvector![i as f64 * 10.0], dvector![1.0]).unwrap()).collect(),
        )
        .unwrap();
        let n = 20_000;
        let (_, labels) = sample_labelled(&g, n, 3).unwrap();
        for (m, pi) in w.iter().enumerate() {
            let freq = labels.iter().filter(|l| **l == m).count() as f64 / n as f64;
            assert!((freq - pi).abs() <= 5.0 * (pi * (1.0 - pi) / n as f64).sqrt());
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let g = Gmm::new(vec![1.0], vec![Gaussian::diagonal(dvector![0.0], dvector![1.0]).unwrap()]).unwrap();
        assert!(sample(&g, 0, 0).is_err());
    }
}
