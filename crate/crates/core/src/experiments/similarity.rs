//! Guide-similarity study.
//!
//! For each grid cell (evaluation time, lookahead span, class, replicate,
//! guide kind) the study draws a latent, evaluates the lookahead guide, and
//! records its cosine against the backend's explicit conditional prediction
//! at the same point. Latents are produced the way a sampler would see
//! them: a prior draw unconditionally denoised down to the evaluation time.
//! One prior draw per (time, replicate) pair is shared across classes,
//! spans, and guide kinds so those comparisons see identical inputs.
//!
//! A guide failure (non-finite feedback, zero-norm direction) becomes a row
//! with `failed = true` and NaN statistics; the study keeps going.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::guidance::{lookahead_subtimes, GuidanceConfig};
use crate::sampler::ddim_step;
use crate::schedule::NoiseSchedule;
use crate::seeding::derive_seed;
use crate::Tensor;

use super::{run_guide, Backend, GuideKind};

/// Seed-derivation tag for this study ("sim" in ASCII).
const STUDY_TAG: u64 = 0x73_69_6d;

/// Grid and protocol for the similarity study.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    /// Evaluation times as fractions of the full schedule.
    pub t_fracs: Vec<f64>,
    /// Lookahead spans as fractions of the full schedule. Spans larger
    /// than the evaluation time are skipped, not errors.
    pub delta_fracs: Vec<f64>,
    /// Independent latent draws per grid cell.
    pub replicates: usize,
    /// Guide kinds to evaluate. The clean-data kind has a fixed span
    /// (the full interval down to zero) and ignores the span grid.
    pub guide_kinds: Vec<GuideKind>,
    /// Classes to condition on; `None` means every mixture class.
    pub classes: Option<Vec<usize>>,
    /// Shared guide settings. The span field is overwritten per cell.
    pub guidance: GuidanceConfig,
    /// Unconditional denoising steps used to carry a prior draw down to
    /// the evaluation time.
    pub init_steps: usize,
    /// Root seed for latent draws.
    pub seed: u64,
}

impl Default for SimilarityConfig {
    fn default() -> SimilarityConfig {
        SimilarityConfig {
            t_fracs: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            delta_fracs: (0..=9).map(|i| i as f64 / 10.0).collect(),
            replicates: 10,
            guide_kinds: vec![
                GuideKind::MpcClassifier,
                GuideKind::MpcConditional,
                GuideKind::CleanData,
            ],
            classes: None,
            guidance: GuidanceConfig::default(),
            init_steps: 8,
            seed: 0,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        if self.t_fracs.is_empty() || self.replicates == 0 || self.guide_kinds.is_empty() {
            return Err(CoreError::InvalidStudy(
                "similarity grid needs at least one time, one replicate, and one guide kind"
                    .into(),
            ));
        }
        if self.init_steps == 0 {
            return Err(CoreError::InvalidStudy("init_steps must be at least 1".into()));
        }
        for &f in self.t_fracs.iter().chain(&self.delta_fracs) {
            if !(0.0..=1.0).contains(&f) {
                return Err(CoreError::InvalidStudy(format!("fraction {f} outside [0, 1]")));
            }
        }
        if self.t_fracs.iter().any(|&f| f <= 0.0) {
            return Err(CoreError::InvalidStudy("evaluation times must be positive".into()));
        }
        Ok(())
    }
}

/// One guide evaluation. `cosine` and `raw_norm` are NaN when `failed`.
#[derive(Clone, Debug)]
pub struct SimilarityRecord {
    pub guide_kind: GuideKind,
    pub t_frac: f64,
    pub delta_frac: f64,
    pub t: usize,
    pub delta: usize,
    pub class: usize,
    pub replicate: usize,
    /// Seed of the prior draw behind this row's latent.
    pub seed: u64,
    pub cosine: f64,
    pub raw_norm: f64,
    pub failed: bool,
}

/// Carries a prior draw down to step `t` with uniform unconditional DDIM
/// steps. At t = t_max the draw is returned as-is.
fn init_latent(backend: &Backend, t: usize, init_steps: usize, seed: u64) -> Result<Tensor> {
    let sched = backend.oracle().schedule().clone();
    let dim = backend.oracle().params().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Tensor::randn(vec![1, dim], &mut rng);
    let t_max = sched.t_max();
    let times = lookahead_subtimes(t_max, t_max - t, init_steps);
    for pair in times.windows(2) {
        let eps = backend.uncond_eps(&z, pair[0])?.stop_gradient();
        z = ddim_step(&z, pair[0], pair[1], &eps, &sched)?;
    }
    Ok(z.stop_gradient())
}

struct Cell {
    kind: GuideKind,
    t_frac: f64,
    delta_frac: f64,
    t: usize,
    delta: usize,
    class: usize,
    replicate: usize,
    t_index: usize,
}

fn evaluate_cell(
    backend: &Backend,
    cfg: &SimilarityConfig,
    cell: &Cell,
    z: &Tensor,
    seed: u64,
) -> Result<SimilarityRecord> {
    let mut gcfg = cfg.guidance.clone();
    gcfg.delta = cell.delta;
    let mut record = SimilarityRecord {
        guide_kind: cell.kind,
        t_frac: cell.t_frac,
        delta_frac: cell.delta_frac,
        t: cell.t,
        delta: cell.delta,
        class: cell.class,
        replicate: cell.replicate,
        seed,
        cosine: f64::NAN,
        raw_norm: f64::NAN,
        failed: true,
    };
    let reference = backend.reference_signal(z, cell.t, cell.class, cell.kind)?;
    match run_guide(backend, cell.kind, z, cell.t, cell.class, &gcfg) {
        Ok(result) => {
            let scored = result.with_reference(&reference)?;
            record.cosine = scored.cosine_vs_reference.unwrap();
            record.raw_norm = scored.raw_norm;
            record.failed = false;
            Ok(record)
        }
        Err(CoreError::GuideFailure { .. }) => Ok(record),
        Err(e) => Err(e),
    }
}

/// Runs the full grid. Rows are ordered by (time, span, class, replicate,
/// guide kind), with the fixed-span clean-data rows appended per time
/// block, so the output order is a pure function of the config.
pub fn run_similarity(backend: &Backend, cfg: &SimilarityConfig) -> Result<Vec<SimilarityRecord>> {
    cfg.validate()?;
    let sched: &NoiseSchedule = backend.oracle().schedule();
    let classes = match &cfg.classes {
        Some(cs) => {
            for &c in cs {
                backend.oracle().params().check_class(c)?;
            }
            cs.clone()
        }
        None => (0..backend.num_classes()).collect(),
    };
    let mpc_kinds: Vec<GuideKind> =
        cfg.guide_kinds.iter().copied().filter(|k| *k != GuideKind::CleanData).collect();
    let wants_clean = cfg.guide_kinds.contains(&GuideKind::CleanData);

    let mut cells = Vec::new();
    for (t_index, &t_frac) in cfg.t_fracs.iter().enumerate() {
        let t = sched.frac_to_step(t_frac)?;
        for &delta_frac in &cfg.delta_fracs {
            let delta = sched.frac_to_step(delta_frac)?;
            if delta > t {
                continue;
            }
            for &class in &classes {
                for replicate in 0..cfg.replicates {
                    for &kind in &mpc_kinds {
                        cells.push(Cell {
                            kind,
                            t_frac,
                            delta_frac,
                            t,
                            delta,
                            class,
                            replicate,
                            t_index,
                        });
                    }
                }
            }
        }
        if wants_clean {
            for &class in &classes {
                for replicate in 0..cfg.replicates {
                    cells.push(Cell {
                        kind: GuideKind::CleanData,
                        t_frac,
                        delta_frac: t_frac,
                        t,
                        delta: t,
                        class,
                        replicate,
                        t_index,
                    });
                }
            }
        }
    }

    // One latent per (time, replicate), shared by every span, class, and
    // guide kind in that block.
    let mut latents: Vec<Vec<(u64, Tensor)>> = Vec::with_capacity(cfg.t_fracs.len());
    for (t_index, &t_frac) in cfg.t_fracs.iter().enumerate() {
        let t = sched.frac_to_step(t_frac)?;
        let mut row = Vec::with_capacity(cfg.replicates);
        for replicate in 0..cfg.replicates {
            let seed = derive_seed(cfg.seed, &[STUDY_TAG, t_index as u64, replicate as u64]);
            row.push((seed, init_latent(backend, t, cfg.init_steps, seed)?));
        }
        latents.push(row);
    }

    cells
        .par_iter()
        .map(|cell| {
            let (seed, z) = &latents[cell.t_index][cell.replicate];
            evaluate_cell(backend, cfg, cell, z, *seed)
        })
        .collect()
}
