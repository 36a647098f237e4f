//! Experiment config: one TOML file describes schedule, mixture, data,
//! training, guidance, sampling, and study grids, so one file reproduces
//! one study. The file carries a single root seed; every random draw in
//! every subcommand derives from it through fixed purpose tags, and the
//! sha256 of the raw file bytes rides along as the config hash stamped
//! into reports and manifests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use guidelab_core::experiments::{GuideKind, RestrictedConfig, SimilarityConfig};
use guidelab_core::guidance::{ClassifierScale, GuidanceConfig};
use guidelab_core::mixture::MixtureParams;
use guidelab_core::models::TrainConfig;
use guidelab_core::oracle::AnalyticMixture;
use guidelab_core::sampler::SampleMethod;
use guidelab_core::schedule::{NoiseSchedule, ScheduleKind};
use guidelab_core::seeding::derive_seed;

use crate::{CliResult, Failure};

/// Purpose tags for deriving per-subsystem seeds from the root seed.
/// Stable by contract: changing one silently changes every artifact.
pub const TAG_DATA: u64 = 1;
pub const TAG_TRAIN_EPS: u64 = 2;
pub const TAG_TRAIN_CLASSIFIER: u64 = 3;
pub const TAG_SAMPLE: u64 = 4;
pub const TAG_SIMILARITY: u64 = 5;
pub const TAG_RESTRICTED: u64 = 6;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; the only entropy source in the whole program.
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub mixture: MixtureSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub guidance: GuidanceSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_schedule_kind")]
    pub kind: String,
    #[serde(default = "default_schedule_steps")]
    pub steps: usize,
}

fn default_schedule_kind() -> String {
    "linear-beta".into()
}

fn default_schedule_steps() -> usize {
    1000
}

impl Default for ScheduleSection {
    fn default() -> ScheduleSection {
        ScheduleSection { kind: default_schedule_kind(), steps: default_schedule_steps() }
    }
}

/// Mixture geometry: either the ring shorthand or explicit components.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub ring: Option<RingSpec>,
    pub means: Option<Vec<Vec<f64>>>,
    pub stds: Option<Vec<f64>>,
    /// Defaults to uniform over components when means/stds are given.
    pub class_probs: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub classes: usize,
    pub radius: f64,
    pub std: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training-set size drawn from the mixture.
    #[serde(default = "default_data_n")]
    pub n: usize,
}

fn default_data_n() -> usize {
    8192
}

impl Default for DataSection {
    fn default() -> DataSection {
        DataSection { n: default_data_n() }
    }
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub eps: TrainParams,
    #[serde(default)]
    pub classifier: TrainParams,
}

/// Mirrors the core training knobs; the seed is not a field because it
/// derives from the root seed.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub drop_prob: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub time_embed_dim: Option<usize>,
    pub class_embed_dim: Option<usize>,
    pub log_every: Option<usize>,
}

impl TrainParams {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            steps: self.steps.unwrap_or(base.steps),
            batch: self.batch.unwrap_or(base.batch),
            lr: self.lr.unwrap_or(base.lr),
            drop_prob: self.drop_prob.unwrap_or(base.drop_prob),
            hidden: self.hidden.clone().unwrap_or(base.hidden),
            time_embed_dim: self.time_embed_dim.unwrap_or(base.time_embed_dim),
            class_embed_dim: self.class_embed_dim.unwrap_or(base.class_embed_dim),
            seed,
            log_every: self.log_every.unwrap_or(base.log_every),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSection {
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default)]
    pub delta: usize,
    #[serde(default = "default_k_denoise")]
    pub k_denoise: usize,
    #[serde(default = "default_true")]
    pub rescale: bool,
    #[serde(default = "default_classifier_scale")]
    pub classifier_scale: String,
    /// Guide kind standing in for the conditional prediction at lookahead
    /// steps.
    #[serde(default = "default_guide_kind")]
    pub kind: String,
}

fn default_w() -> f64 {
    2.0
}

fn default_k_denoise() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_classifier_scale() -> String {
    "sigma".into()
}

fn default_guide_kind() -> String {
    "mpc-conditional".into()
}

impl Default for GuidanceSection {
    fn default() -> GuidanceSection {
        GuidanceSection {
            w: default_w(),
            delta: 0,
            k_denoise: default_k_denoise(),
            rescale: default_true(),
            classifier_scale: default_classifier_scale(),
            kind: default_guide_kind(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    #[serde(default = "default_sample_steps")]
    pub steps: usize,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_sample_seeds")]
    pub seeds: usize,
    pub class: Option<usize>,
    /// Overrides the guidance section's weight for sampling only.
    pub w: Option<f64>,
}

fn default_sample_steps() -> usize {
    50
}

fn default_method() -> String {
    "ddim".into()
}

fn default_sample_seeds() -> usize {
    64
}

impl Default for SampleSection {
    fn default() -> SampleSection {
        SampleSection {
            steps: default_sample_steps(),
            method: default_method(),
            seeds: default_sample_seeds(),
            class: None,
            w: None,
        }
    }
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub similarity: SimilaritySection,
    #[serde(default)]
    pub restricted: RestrictedSection,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilaritySection {
    pub t_fracs: Option<Vec<f64>>,
    pub delta_fracs: Option<Vec<f64>>,
    pub replicates: Option<usize>,
    pub guide_kinds: Option<Vec<String>>,
    pub classes: Option<Vec<usize>>,
    pub init_steps: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictedSection {
    pub num_seeds: Option<usize>,
    /// Overrides the guidance section's kind for the study's gap steps.
    pub guide_kind: Option<String>,
    pub method: Option<String>,
    pub gold_steps: Option<usize>,
}

/// A parsed config plus the identity of the bytes it came from.
pub struct LoadedConfig {
    pub cfg: ExperimentConfig,
    /// sha256 hex of the raw file bytes.
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<LoadedConfig> {
        let bytes = std::fs::read(path).map_err(|e| {
            Failure::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|e| Failure::usage(format!("config {} is not UTF-8: {e}", path.display())))?;
        // toml's errors carry line/column spans; keep them verbatim.
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            Failure::usage(format!("invalid config {}:\n{e}", path.display()))
        })?;
        let hash = sha256_hex(&bytes);
        Ok(LoadedConfig { cfg, hash })
    }

    pub fn schedule(&self) -> CliResult<Arc<NoiseSchedule>> {
        let kind = ScheduleKind::parse(&self.cfg.schedule.kind)
            .map_err(|e| Failure::usage(e.to_string()))?;
        let sched = NoiseSchedule::new(kind, self.cfg.schedule.steps)
            .map_err(|e| Failure::usage(e.to_string()))?;
        Ok(Arc::new(sched))
    }

    pub fn mixture(&self) -> CliResult<MixtureParams> {
        let m = &self.cfg.mixture;
        let explicit = m.means.is_some() || m.stds.is_some() || m.class_probs.is_some();
        let params = match (&m.ring, explicit) {
            (Some(_), true) => {
                return Err(Failure::usage(
                    "mixture: give either ring = {...} or explicit means/stds, not both",
                ))
            }
            (Some(ring), false) => MixtureParams::ring(ring.classes, ring.radius, ring.std),
            (None, true) => {
                let means = m.means.clone().ok_or_else(|| {
                    Failure::usage("mixture: explicit form needs a means array")
                })?;
                let stds = m.stds.clone().ok_or_else(|| {
                    Failure::usage("mixture: explicit form needs a stds array")
                })?;
                let class_probs = m.class_probs.clone().unwrap_or_else(|| {
                    vec![1.0 / means.len() as f64; means.len()]
                });
                MixtureParams { means, stds, class_probs }
            }
            (None, false) => {
                return Err(Failure::usage(
                    "mixture: give ring = { classes, radius, std } or explicit means/stds",
                ))
            }
        };
        params.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(params)
    }

    pub fn oracle(&self) -> CliResult<AnalyticMixture> {
        let sched = self.schedule()?;
        Ok(AnalyticMixture::new(self.mixture()?, sched)?)
    }

    pub fn guidance(&self) -> CliResult<GuidanceConfig> {
        let g = &self.cfg.guidance;
        let scale = ClassifierScale::parse(&g.classifier_scale)
            .map_err(|e| Failure::usage(e.to_string()))?;
        let cfg = GuidanceConfig {
            w: g.w,
            delta: g.delta,
            k_denoise: g.k_denoise,
            rescale: g.rescale,
            classifier_scale: scale,
        };
        cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn guide_kind(&self) -> CliResult<GuideKind> {
        GuideKind::parse(&self.cfg.guidance.kind).map_err(|e| Failure::usage(e.to_string()))
    }

    pub fn sample_method(&self, over: Option<crate::MethodArg>) -> CliResult<SampleMethod> {
        match over {
            Some(crate::MethodArg::Ddim) => Ok(SampleMethod::Ddim),
            Some(crate::MethodArg::Plms) => Ok(SampleMethod::Plms),
            None => SampleMethod::parse(&self.cfg.sample.method)
                .map_err(|e| Failure::usage(e.to_string())),
        }
    }

    pub fn similarity_config(&self) -> CliResult<SimilarityConfig> {
        let s = &self.cfg.study.similarity;
        let base = SimilarityConfig::default();
        let guide_kinds = match &s.guide_kinds {
            Some(names) => names
                .iter()
                .map(|n| GuideKind::parse(n).map_err(|e| Failure::usage(e.to_string())))
                .collect::<CliResult<Vec<_>>>()?,
            None => base.guide_kinds,
        };
        let cfg = SimilarityConfig {
            t_fracs: s.t_fracs.clone().unwrap_or(base.t_fracs),
            delta_fracs: s.delta_fracs.clone().unwrap_or(base.delta_fracs),
            replicates: s.replicates.unwrap_or(base.replicates),
            guide_kinds,
            classes: s.classes.clone(),
            guidance: self.guidance()?,
            init_steps: s.init_steps.unwrap_or(base.init_steps),
            seed: self.derived_seed(TAG_SIMILARITY),
        };
        cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn restricted_config(&self) -> CliResult<RestrictedConfig> {
        let r = &self.cfg.study.restricted;
        let base = RestrictedConfig::default();
        let guide_kind = match &r.guide_kind {
            Some(name) => GuideKind::parse(name).map_err(|e| Failure::usage(e.to_string()))?,
            None => self.guide_kind()?,
        };
        let method = match &r.method {
            Some(name) => SampleMethod::parse(name).map_err(|e| Failure::usage(e.to_string()))?,
            None => base.method,
        };
        let cfg = RestrictedConfig {
            num_seeds: r.num_seeds.unwrap_or(base.num_seeds),
            guidance: self.guidance()?,
            guide_kind,
            method,
            gold_steps: r.gold_steps.unwrap_or(base.gold_steps),
            seed: self.derived_seed(TAG_RESTRICTED),
        };
        cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn derived_seed(&self, tag: u64) -> u64 {
        derive_seed(self.cfg.seed, &[tag])
    }

    /// Output directory: the flag wins; otherwise a deterministic leaf
    /// under $GUIDELAB_OUT (or the working directory). No timestamps, so
    /// reruns land in the same place and overwrite byte-identically.
    pub fn resolve_out(&self, flag: Option<PathBuf>, leaf: &str) -> PathBuf {
        match flag {
            Some(p) => p,
            None => {
                let root = std::env::var_os("GUIDELAB_OUT")
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."));
                root.join(format!("{leaf}-{}", &self.hash[..8]))
            }
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
