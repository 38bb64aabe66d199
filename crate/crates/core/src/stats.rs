//! Small statistical helpers shared by the simulators: seed splitting,
//! batch means, Kolmogorov–Smirnov distances and a chi-square uniformity test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Generator used by every simulator in the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive the seed of stream `index` from a master seed.
///
/// SplitMix64 finaliser over `master` and `index`; the mapping is a pure
/// function, so results never depend on thread scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator n - 1).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Batch-means estimate of an asymptotic variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub estimate: f64,
    pub se: f64,
    pub n_batches: usize,
    pub batch_len: usize,
}

pub const MIN_BATCHES: usize = 10;
pub const MIN_BATCH_LEN: usize = 100;

/// `dt * batch_len * Var(batch means)` over `n_batches` contiguous batches;
/// a trailing remainder shorter than one batch is discarded.
pub fn batch_means(series: &[f64], n_batches: usize, dt: f64) -> Result<BatchMeans> {
    if n_batches < MIN_BATCHES {
        return Err(Error::InsufficientData(format!(
            "{n_batches} batches requested, need at least {MIN_BATCHES}"
        )));
    }
    let batch_len = series.len() / n_batches;
    if batch_len < MIN_BATCH_LEN {
        return Err(Error::InsufficientData(format!(
            "{} values give batches of length {batch_len} < {MIN_BATCH_LEN}",
            series.len()
        )));
    }
    let means: Vec<f64> = series
        .chunks_exact(batch_len)
        .take(n_batches)
        .map(mean)
        .collect();
    let estimate = dt * batch_len as f64 * sample_variance(&means);
    let se = estimate * (2.0 / (n_batches as f64 - 1.0)).sqrt();
    Ok(BatchMeans {
        estimate,
        se,
        n_batches,
        batch_len,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov–Smirnov distance between a discrete law on sorted `atoms` and
/// the empirical law of `sample`.
pub fn ks_discrete_vs_sample(atoms: &[f64], probs: &[f64], sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let emp_le = |x: f64| s.partition_point(|&y| y <= x) as f64 / n;
    let emp_lt = |x: f64| s.partition_point(|&y| y < x) as f64 / n;
    let mut cum = 0.0;
    let mut d: f64 = 0.0;
    for (&x, &p) in atoms.iter().zip(probs) {
        // left limit at the atom, then the value at the atom
        d = d.max((cum - emp_lt(x)).abs());
        cum += p;
        d = d.max((cum - emp_le(x)).abs());
    }
    d
}

/// Chi-square test of uniform occupancy for a correlated index sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Integrated autocorrelation time used to deflate the raw statistic.
    pub tau: f64,
}

/// Pearson chi-square against the uniform law on `0..n_cells`, with the
/// statistic divided by the largest batch-means autocorrelation time of the
/// cell indicators so that Markov-chain input is not treated as i.i.d.
pub fn chi_square_uniform(indices: &[usize], n_cells: usize) -> Result<UniformityTest> {
    if n_cells <= 1 {
        return Ok(UniformityTest {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            tau: 1.0,
        });
    }
    let n = indices.len();
    let mut counts = vec![0usize; n_cells];
    for &i in indices {
        counts[i] += 1;
    }
    let expected = n as f64 / n_cells as f64;
    let raw: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();

    let n_batches = (n / 1000).clamp(MIN_BATCHES, 100);
    let mut tau: f64 = 1.0;
    for (cell, &count) in counts.iter().enumerate() {
        let ind: Vec<f64> = indices
            .iter()
            .map(|&i| if i == cell { 1.0 } else { 0.0 })
            .collect();
        let p = count as f64 / n as f64;
        let var = p * (1.0 - p);
        if var > 0.0 {
            let bm = batch_means(&ind, n_batches, 1.0)?;
            tau = tau.max(bm.estimate / var);
        }
    }
    let statistic = raw / tau;
    let dof = n_cells - 1;
    let chi2 = ChiSquared::new(dof as f64).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(UniformityTest {
        statistic,
        dof,
        p_value: 1.0 - chi2.cdf(statistic),
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(derive_seed(7, 3), a[3]);
        assert_ne!(derive_seed(8, 3), a[3]);
    }

    #[test]
    fn batch_means_iid_normal() {
        let mut rng = rng_from_seed(11);
        let xs: Vec<f64> = (0..30_000).map(|_| rng.sample(StandardNormal)).collect();
        let bm = batch_means(&xs, 30, 1.0).unwrap();
        assert!((bm.estimate - 1.0).abs() < 3.0 * bm.se, "{bm:?}");
    }

    #[test]
    fn batch_means_constant_is_zero() {
        let xs = vec![2.5; 5000];
        let bm = batch_means(&xs, 20, 0.1).unwrap();
        assert_eq!(bm.estimate, 0.0);
    }

    #[test]
    fn batch_means_ar1() {
        // x_t = 0.5 x_{t-1} + e_t with Var(x) = 1: asymptotic variance (1+ρ)/(1-ρ) = 3.
        let rho: f64 = 0.5;
        let mut rng = rng_from_seed(5);
        let sd = (1.0 - rho * rho).sqrt();
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = rho * x + sd * e;
                x
            })
            .collect();
        let bm = batch_means(&xs, 40, 1.0).unwrap();
        assert!((bm.estimate - 3.0).abs() < 4.0 * bm.se, "{bm:?}");
    }

    #[test]
    fn batch_means_rejects_short_input() {
        assert!(matches!(
            batch_means(&[0.0; 500], 10, 1.0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            batch_means(&[0.0; 5000], 5, 1.0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ks_statistics() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 0.1], &[1.0, 2.0]), 1.0);
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_one_sample(&grid, |x| x) <= 0.0005 + 1e-12);
        let d = ks_discrete_vs_sample(&[0.0, 1.0], &[0.5, 0.5], &[0.0, 1.0]);
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn chi_square_on_iid_uniform_indices() {
        let mut rng = rng_from_seed(3);
        let idx: Vec<usize> = (0..50_000).map(|_| rng.gen_range(0..5)).collect();
        let t = chi_square_uniform(&idx, 5).unwrap();
        assert!(t.p_value > 0.001, "{t:?}");
        let skewed: Vec<usize> = (0..50_000)
            .map(|i| if i % 3 == 0 { 0 } else { 1 })
            .collect();
        assert!(chi_square_uniform(&skewed, 2).unwrap().p_value < 1e-6);
    }
}
