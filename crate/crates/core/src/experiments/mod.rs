//! Reproducible studies built on the guides, samplers, and metrics.
//!
//! Two studies ship with the crate. The similarity study measures how well
//! each lookahead guide tracks the explicit conditional score it
//! approximates, over a grid of evaluation times and lookahead spans. The
//! restricted study runs five sampling arms from shared prior draws and
//! compares their terminal samples when explicit guidance is only available
//! at a subset of steps. Both studies run their independent cells in
//! parallel and order results by grid position, so reruns with one seed
//! produce byte-identical reports.

pub mod amplification;
pub mod backend;
pub mod report;
pub mod restricted;
pub mod similarity;


pub use amplification::{amplification_demo, combined_cosine, AmplificationDemo, AmplificationRow};
pub use backend::Backend;
pub use report::{
    amplification_csv, history_csv, restricted_divergence_csv, restricted_mmd_csv,
    restricted_samples_csv, restricted_summary_csv, similarity_csv, similarity_curves_dat,
    ReportMeta,
};
pub use restricted::{
    gap_spans, run_restricted, Arm, ArmRun, ArmSummary, DivergenceRow, PairwiseMmd,
    RestrictedConfig, RestrictedStudy,
};
pub use similarity::{run_similarity, SimilarityConfig, SimilarityRecord};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::guidance::{
    cfg_combine, classifier_guide, clean_data_guide, mpc_guide_classifier, mpc_guide_conditional,
    GuidanceConfig, GuideResult,
};
use crate::sampler::GuidanceMode;
use crate::Tensor;

/// Which feedback signal the lookahead guide backpropagates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuideKind {
    /// Noised-classifier log-probability at the lookahead point.
    MpcClassifier,
    /// Squared distance to the conditional model's denoising target.
    MpcConditional,
    /// Clean-data classifier log-probability after denoising the full span.
    CleanData,
}

impl GuideKind {
    pub fn name(&self) -> &'static str {
        match self {
            GuideKind::MpcClassifier => "mpc-classifier",
            GuideKind::MpcConditional => "mpc-conditional",
            GuideKind::CleanData => "clean-data",
        }
    }

    pub fn parse(s: &str) -> Result<GuideKind> {
        match s {
            "mpc-classifier" => Ok(GuideKind::MpcClassifier),
            "mpc-conditional" => Ok(GuideKind::MpcConditional),
            "clean-data" => Ok(GuideKind::CleanData),
            other => Err(CoreError::InvalidStudy(format!(
                "unknown guide kind {other:?} (expected mpc-classifier, mpc-conditional, or clean-data)"
            ))),
        }
    }
}

/// Runs one guide evaluation against a backend. The clean-data kind spans
/// the full interval down to zero noise and ignores `cfg.delta`.
pub fn run_guide(
    backend: &Backend,
    kind: GuideKind,
    z: &Tensor,
    t: usize,
    class: usize,
    cfg: &GuidanceConfig,
) -> Result<GuideResult> {
    let sched = backend.oracle().schedule().as_ref();
    let uncond = |zz: &Tensor, tt: usize| backend.uncond_eps(zz, tt);
    match kind {
        GuideKind::MpcClassifier => {
            let logp = |zz: &Tensor, tt: usize| backend.class_logp(zz, tt, class);
            mpc_guide_classifier(z, t, cfg, &logp, &uncond, sched)
        }
        GuideKind::MpcConditional => {
            let cond = |zz: &Tensor, tt: usize| backend.cond_eps(zz, tt, class);
            mpc_guide_conditional(z, t, cfg, &cond, &uncond, sched)
        }
        GuideKind::CleanData => {
            let clean = |xx: &Tensor| backend.clean_logp(xx, class);
            clean_data_guide(z, t, &clean, &uncond, cfg, sched)
        }
    }
}

/// Guided prediction for one plan step. Unconditional passes the plain
/// prediction through untouched; explicit runs the conditional prediction
/// through the guided combination; the lookahead mode substitutes the
/// configured guide kind for the conditional prediction, reading the span
/// from `cfg.delta`. This is the dispatch the restricted-study arms use,
/// exposed so sampling front ends combine predictions the same way.
pub fn guided_eps(
    backend: &Backend,
    z: &Tensor,
    t: usize,
    mode: GuidanceMode,
    class: usize,
    kind: GuideKind,
    cfg: &GuidanceConfig,
) -> Result<Tensor> {
    let sched = backend.oracle().schedule().clone();
    let uncond = backend.uncond_eps(&z.stop_gradient(), t)?;
    match mode {
        GuidanceMode::Unconditional => Ok(uncond),
        GuidanceMode::Explicit => {
            let cond = backend.cond_eps(&z.stop_gradient(), t, class)?;
            Ok(cfg_combine(&cond, &uncond, cfg.w))
        }
        GuidanceMode::Mpc => {
            // The denoising-target kind already lives in prediction space
            // and takes the configured norm rescale. The classifier kinds
            // produce an ascent gradient whose own magnitude feeds the
            // score decomposition, so the rescale is disabled before the
            // combinator maps it over.
            let surrogate = match kind {
                GuideKind::MpcConditional => run_guide(backend, kind, z, t, class, cfg)?.xi,
                GuideKind::MpcClassifier | GuideKind::CleanData => {
                    let mut gcfg = cfg.clone();
                    gcfg.rescale = false;
                    let grad = run_guide(backend, kind, z, t, class, &gcfg)?.xi;
                    classifier_guide(&uncond, &grad, t, cfg.classifier_scale, &sched)?
                }
            };
            Ok(cfg_combine(&surrogate, &uncond, cfg.w))
        }
    }
}
