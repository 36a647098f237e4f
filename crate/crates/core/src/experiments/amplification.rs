//! Alignment loss through the guided combination.
//!
//! The guided prediction (1 + w) a - w u stretches the guide a away from
//! the unconditional prediction u. Two guides that agree closely can agree
//! less after the combination: any shared component along u is damped
//! relative to their difference. This module makes that concrete with a
//! worst-case-style construction. Starting from a real guide direction a
//! at a drawn latent, it builds a perturbed copy at a chosen input cosine
//! and an unconditional prediction u = gamma * a, then reports the cosine
//! after combining both with the same u. For gamma = 0 the combination is
//! a pure rescale and the cosine is unchanged; for gamma > 0 it drops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::metrics::{cosine, l2_norm};
use crate::mixture::MixtureDataset;
use crate::oracle::AnalyticMixture;
use crate::seeding::derive_seed;
use crate::Tensor;

/// Seed-derivation tag for this demo ("amp" in ASCII).
const DEMO_TAG: u64 = 0x61_6d_70;

/// One gamma setting of the construction.
#[derive(Clone, Debug)]
pub struct AmplificationRow {
    /// Scale of the unconditional prediction along the guide direction.
    pub gamma: f64,
    /// Cosine between the two guides before combining.
    pub input_cosine: f64,
    /// Cosine between the combined predictions.
    pub output_cosine: f64,
}

#[derive(Clone, Debug)]
pub struct AmplificationDemo {
    pub w: f64,
    pub t: usize,
    pub class: usize,
    /// Seed behind the latent whose guide direction anchors the
    /// construction.
    pub seed: u64,
    pub rows: Vec<AmplificationRow>,
}

/// Cosine between (1 + w) a - w u and (1 + w) b - w u.
pub fn combined_cosine(a: &[f64], b: &[f64], u: &[f64], w: f64) -> Result<f64> {
    let combine = |g: &[f64]| -> Vec<f64> {
        g.iter().zip(u).map(|(gi, ui)| (1.0 + w) * gi - w * ui).collect()
    };
    cosine(&combine(a), &combine(b))
}

/// Unit vector orthogonal to `a`, deterministic in `a`.
fn orthonormal_complement(a: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(a);
    if norm == 0.0 {
        return Err(CoreError::ZeroVector);
    }
    // Seed vector: a basis direction chosen to avoid near-parallelism with
    // a (the one with the smallest |a_i| component).
    let pivot = a
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| x.abs().partial_cmp(&y.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut e: Vec<f64> = vec![0.0; a.len()];
    e[pivot] = 1.0;
    let dot: f64 = a.iter().zip(&e).map(|(x, y)| x * y).sum();
    for (ei, ai) in e.iter_mut().zip(a) {
        *ei -= dot * ai / (norm * norm);
    }
    let enorm = l2_norm(&e);
    if enorm == 0.0 {
        return Err(CoreError::ZeroVector);
    }
    Ok(e.into_iter().map(|x| x / enorm).collect())
}

/// Builds the construction at a latent drawn from the mixture's marginal
/// at step `t` and evaluates the combined cosine for each gamma.
///
/// `input_cosine` must lie in (0, 1]; the perturbed guide is placed at
/// exactly that angle from the real guide direction.
pub fn amplification_demo(
    oracle: &AnalyticMixture,
    t: usize,
    class: usize,
    input_cosine: f64,
    gammas: &[f64],
    w: f64,
    seed: u64,
) -> Result<AmplificationDemo> {
    if !(input_cosine > 0.0 && input_cosine <= 1.0) {
        return Err(CoreError::InvalidStudy(format!(
            "input cosine {input_cosine} outside (0, 1]"
        )));
    }
    if !(w >= 0.0) {
        return Err(CoreError::InvalidStudy(format!("guidance weight {w} must be >= 0")));
    }
    let sched = oracle.schedule().clone();
    sched.check_step(t)?;

    // A real guide direction: the conditional prediction at a marginal
    // draw (a mixture point corrupted to level t). The construction only
    // needs its direction.
    let draw_seed = derive_seed(seed, &[DEMO_TAG, t as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let dim = oracle.params().dim();
    let data = MixtureDataset::generate(oracle.params().clone(), 1, draw_seed)?;
    let z = Tensor::row(data.samples[0].0.clone())
        .scale(sched.alpha(t))
        .add(&Tensor::randn(vec![1, dim], &mut rng).scale(sched.sigma(t)));
    let a_raw = oracle.optimal_eps(&z, t, Some(class))?.data().to_vec();
    let norm = l2_norm(&a_raw);
    if norm == 0.0 {
        return Err(CoreError::ZeroVector);
    }
    let a: Vec<f64> = a_raw.iter().map(|x| x / norm).collect();
    let e = orthonormal_complement(&a)?;
    let sin = (1.0 - input_cosine * input_cosine).sqrt();
    let b: Vec<f64> =
        a.iter().zip(&e).map(|(ai, ei)| input_cosine * ai + sin * ei).collect();

    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let u: Vec<f64> = a.iter().map(|x| gamma * x).collect();
        rows.push(AmplificationRow {
            gamma,
            input_cosine: cosine(&a, &b)?,
            output_cosine: combined_cosine(&a, &b, &u, w)?,
        });
    }
    Ok(AmplificationDemo { w, t, class, seed, rows })
}
