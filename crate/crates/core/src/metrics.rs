//! Similarity and distribution-distance metrics.
//!
//! Cosine similarity compares guide directions, kernel MMD compares sample
//! sets, class purity scores terminal samples against the exact posterior,
//! and trajectory divergence tracks where two runs of the same plan drift
//! apart. Everything is seeded; reruns reproduce every number bit for bit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::oracle::AnalyticMixture;

/// Cosine similarity of two equal-length vectors. A zero vector has no
/// direction, so it is an error rather than a silent 0 or NaN.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "cosine: length mismatch: {} vs {}", a.len(), b.len());
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "l2_distance: length mismatch: {} vs {}", a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Median of a slice; the caller keeps ownership of the original order.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median: NaN in input"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Outcome of an MMD two-sample test.
#[derive(Debug, Clone)]
pub struct MmdResult {
    /// Unbiased squared MMD estimate; can be negative near the null.
    pub mmd2: f64,
    /// 95th percentile of the permutation null.
    pub threshold: f64,
    /// Fraction of permuted statistics at or above the observed one.
    pub p_value: f64,
    /// Kernel bandwidth actually used (median pairwise distance).
    pub bandwidth: f64,
}

impl MmdResult {
    /// The sets are distinguishable at the 5% level.
    pub fn significant(&self) -> bool {
        self.mmd2 > self.threshold
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unbiased squared MMD of the two index sets under a precomputed pooled
/// kernel matrix. U-statistic form: diagonal terms are excluded from the
/// within-set sums.
fn mmd2_from_kernel(k: &[Vec<f64>], xs: &[usize], ys: &[usize]) -> f64 {
    let (m, n) = (xs.len() as f64, ys.len() as f64);
    let mut kxx = 0.0;
    for (i, &a) in xs.iter().enumerate() {
        for &b in &xs[i + 1..] {
            kxx += k[a][b];
        }
    }
    let mut kyy = 0.0;
    for (i, &a) in ys.iter().enumerate() {
        for &b in &ys[i + 1..] {
            kyy += k[a][b];
        }
    }
    let mut kxy = 0.0;
    for &a in xs {
        for &b in ys {
            kxy += k[a][b];
        }
    }
    2.0 * kxx / (m * (m - 1.0)) + 2.0 * kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

/// Two-sample kernel MMD test with an RBF kernel.
///
/// The bandwidth is the median pairwise distance over the pooled set, the
/// null distribution comes from 200 seeded permutations of the pooled
/// labels, and the threshold is the 190th of the 200 sorted permuted
/// statistics. The pooled kernel matrix is computed once; permutations only
/// reindex it.
pub fn mmd_rbf(xs: &[Vec<f64>], ys: &[Vec<f64>], seed: u64) -> Result<MmdResult> {
    const PERMUTATIONS: usize = 200;
    if xs.len() < 2 || ys.len() < 2 {
        return Err(CoreError::EmptySampleSet);
    }
    let pooled: Vec<&[f64]> = xs.iter().chain(ys.iter()).map(|v| v.as_slice()).collect();
    let total = pooled.len();

    let mut dists = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        assert_eq!(
            pooled[i].len(),
            pooled[0].len(),
            "mmd_rbf: dimension mismatch: {} vs {}",
            pooled[i].len(),
            pooled[0].len()
        );
        for j in i + 1..total {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    let bandwidth = median(&dists);
    if bandwidth == 0.0 {
        return Err(CoreError::DegenerateSamples(
            "median pairwise distance is zero; pooled samples are indistinguishable".into(),
        ));
    }

    let inv = -0.5 / (bandwidth * bandwidth);
    let mut kernel = vec![vec![0.0; total]; total];
    for i in 0..total {
        kernel[i][i] = 1.0;
        for j in i + 1..total {
            let k = (sq_dist(pooled[i], pooled[j]) * inv).exp();
            kernel[i][j] = k;
            kernel[j][i] = k;
        }
    }

    let observed_x: Vec<usize> = (0..xs.len()).collect();
    let observed_y: Vec<usize> = (xs.len()..total).collect();
    let mmd2 = mmd2_from_kernel(&kernel, &observed_x, &observed_y);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..total).collect();
    let mut null = Vec::with_capacity(PERMUTATIONS);
    for _ in 0..PERMUTATIONS {
        indices.shuffle(&mut rng);
        null.push(mmd2_from_kernel(&kernel, &indices[..xs.len()], &indices[xs.len()..]));
    }
    let exceed = null.iter().filter(|&&v| v >= mmd2).count();
    let p_value = exceed as f64 / PERMUTATIONS as f64;
    null.sort_by(|a, b| a.partial_cmp(b).expect("mmd_rbf: NaN in permutation null"));
    let threshold = null[189];

    Ok(MmdResult { mmd2, threshold, p_value, bandwidth })
}

/// Fraction of samples whose exact clean-data posterior puts the intended
/// class first.
pub fn class_purity(
    samples: &[Vec<f64>],
    intended: &[usize],
    oracle: &AnalyticMixture,
) -> Result<f64> {
    assert_eq!(
        samples.len(),
        intended.len(),
        "class_purity: {} samples but {} labels",
        samples.len(),
        intended.len()
    );
    if samples.is_empty() {
        return Err(CoreError::EmptySampleSet);
    }
    let mut hits = 0usize;
    for (x, &c) in samples.iter().zip(intended) {
        oracle.params().check_class(c)?;
        if oracle.bayes_class(x)? == c {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Per-time L2 distance between two trajectories of the same plan.
/// Entry i compares the latents at `times[i]`; the final entry compares the
/// clean-sample reconstructions.
pub fn trajectory_divergence(
    a: &crate::sampler::Trajectory,
    b: &crate::sampler::Trajectory,
) -> Result<Vec<f64>> {
    if a.times != b.times || a.latents.len() != b.latents.len() {
        return Err(CoreError::MismatchedPlans);
    }
    Ok(a.latents
        .iter()
        .zip(&b.latents)
        .map(|(x, y)| l2_distance(x.data(), y.data()))
        .collect())
}
