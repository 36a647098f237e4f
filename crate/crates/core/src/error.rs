use thiserror::Error;

/// Errors surfaced across the crate. Shape mismatches in tensor arithmetic
/// are programmer errors and panic with both shapes instead.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("backward target must hold a single element, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("tensor is not recorded on this tape")]
    NotOnTape,

    #[error("tape was already consumed by a backward pass")]
    TapeConsumed,

    #[error("schedule needs at least 2 steps, got {steps}")]
    ScheduleTooShort { steps: usize },

    #[error("step {t} out of range 0..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("target step {t_next} must lie strictly below current step {t}")]
    BadStepOrder { t: usize, t_next: usize },

    #[error("invalid step plan: {0}")]
    InvalidPlan(String),

    #[error("unknown class {class}, expected one of 0..{num_classes}")]
    UnknownClass { class: usize, num_classes: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("guide failed at t = {t}, delta = {delta}: {detail}")]
    GuideFailure { t: usize, delta: usize, detail: String },

    #[error("invalid guidance config: {0}")]
    InvalidGuidance(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid study config: {0}")]
    InvalidStudy(String),

    #[error("cosine undefined for a zero-norm vector")]
    ZeroVector,

    #[error("two-sample statistic undefined: {0}")]
    DegenerateSamples(String),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("trajectories were produced by different step plans")]
    MismatchedPlans,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
