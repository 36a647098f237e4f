//! Deterministic reverse-process steppers.
//!
//! Both steppers share one update rule: reconstruct the clean-sample
//! estimate x_hat = (z - sigma_t * eps) / alpha_t, then re-noise it to the
//! target level, z' = alpha_t' * x_hat + sigma_t' * eps. DDIM uses the
//! current noise prediction directly; PLMS feeds the update an
//! Adams-Bashforth combination of the recent predictions instead, which
//! buys higher-order accuracy at the same model-call budget.
//!
//! Steps are pure tensor ops, so a whole denoising chain can be recorded on
//! a tape and differentiated; the guidance module builds on exactly that.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};
use crate::schedule::NoiseSchedule;

/// How the noise prediction at one plan time is to be produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// Guided combination of an explicit conditional prediction.
    Explicit,
    /// Guided combination of a lookahead guide standing in for the
    /// conditional prediction.
    Mpc,
    /// Plain unconditional prediction.
    Unconditional,
}

impl GuidanceMode {
    pub fn name(&self) -> &'static str {
        match self {
            GuidanceMode::Explicit => "explicit",
            GuidanceMode::Mpc => "mpc",
            GuidanceMode::Unconditional => "unconditional",
        }
    }

    pub fn parse(s: &str) -> Result<GuidanceMode> {
        match s {
            "explicit" => Ok(GuidanceMode::Explicit),
            "mpc" => Ok(GuidanceMode::Mpc),
            "unconditional" => Ok(GuidanceMode::Unconditional),
            other => Err(CoreError::InvalidPlan(format!("unknown step mode '{other}'"))),
        }
    }
}

/// Evaluation times for one sampling run, strictly decreasing and ending at
/// step 0, with one mode tag per time. The latent starts at `times[0]`.
#[derive(Debug, Clone)]
pub struct StepPlan {
    times: Vec<usize>,
    modes: Vec<GuidanceMode>,
}

impl StepPlan {
    pub fn new(times: Vec<usize>, modes: Vec<GuidanceMode>) -> Result<StepPlan> {
        if times.is_empty() {
            return Err(CoreError::InvalidPlan("empty plan".into()));
        }
        if times.len() != modes.len() {
            return Err(CoreError::InvalidPlan(format!(
                "{} times but {} modes",
                times.len(),
                modes.len()
            )));
        }
        if *times.last().unwrap() != 0 {
            return Err(CoreError::InvalidPlan(format!(
                "plan must end at step 0, got {}",
                times.last().unwrap()
            )));
        }
        if times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CoreError::InvalidPlan(format!(
                "times must be strictly decreasing, got {times:?}"
            )));
        }
        Ok(StepPlan { times, modes })
    }

    /// Builds a plan from fractions of the schedule's step count.
    pub fn from_fracs(
        fracs: &[f64],
        modes: &[GuidanceMode],
        sched: &NoiseSchedule,
    ) -> Result<StepPlan> {
        let times = fracs.iter().map(|&f| sched.frac_to_step(f)).collect::<Result<Vec<_>>>()?;
        StepPlan::new(times, modes.to_vec())
    }

    /// `n` evenly spaced evaluation times ((n-1)/n, ..., 1/n, 0 of the full
    /// schedule), all tagged with one mode. The initial latent is assigned
    /// to the first time.
    pub fn uniform(n: usize, mode: GuidanceMode, sched: &NoiseSchedule) -> Result<StepPlan> {
        if n == 0 {
            return Err(CoreError::InvalidPlan("zero-step plan".into()));
        }
        let fracs: Vec<f64> = (1..=n).map(|i| (n - i) as f64 / n as f64).collect();
        let times: Vec<usize> =
            fracs.iter().map(|&f| sched.frac_to_step(f)).collect::<Result<Vec<_>>>()?;
        if times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CoreError::InvalidPlan(format!(
                "{n} uniform steps collide on a {}-step schedule",
                sched.t_max()
            )));
        }
        StepPlan::new(times, vec![mode; n])
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn modes(&self) -> &[GuidanceMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Times carrying a given mode, noisiest first.
    pub fn times_with_mode(&self, mode: GuidanceMode) -> Vec<usize> {
        self.times
            .iter()
            .zip(&self.modes)
            .filter(|(_, m)| **m == mode)
            .map(|(t, _)| *t)
            .collect()
    }

    /// Compact rendering like "0.875:mpc;0.750:explicit;..." used in result
    /// rows.
    pub fn describe(&self, sched: &NoiseSchedule) -> String {
        self.times
            .iter()
            .zip(&self.modes)
            .map(|(t, m)| format!("{:.3}:{}", *t as f64 / sched.t_max() as f64, m.name()))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Clean-sample estimate x_hat = (z - sigma_t * eps) / alpha_t.
pub fn reconstruct_clean(z: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    Ok(z.sub(&eps.scale(sched.sigma(t))).scale(1.0 / sched.alpha(t)))
}

/// One deterministic reverse jump t -> t_next under a fixed noise
/// prediction. Linear in (z, eps) for a fixed step pair.
pub fn ddim_step(
    z: &Tensor,
    t: usize,
    t_next: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    if t_next >= t {
        return Err(CoreError::BadStepOrder { t, t_next });
    }
    let x_hat = reconstruct_clean(z, t, eps, sched)?;
    Ok(x_hat.scale(sched.alpha(t_next)).add(&eps.scale(sched.sigma(t_next))))
}

/// Rolling window of recent noise predictions, most recent first. Length
/// caps at 4, the highest-order Adams-Bashforth row used.
#[derive(Debug, Clone, Default)]
pub struct PlmsState {
    history: Vec<Tensor>,
}

impl PlmsState {
    pub fn new() -> PlmsState {
        PlmsState { history: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

/// Adams-Bashforth rows by order; each row sums to 1, so a constant
/// prediction stream passes through unchanged.
const AB_WEIGHTS: [&[f64]; 4] = [
    &[1.0],
    &[3.0 / 2.0, -1.0 / 2.0],
    &[23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
    &[55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
];

/// Pseudo-linear-multistep jump: combines `eps_now` with up to three prior
/// predictions at the highest order the history supports, then steps like
/// DDIM. Warmup ramps the order up from 1 as history accumulates.
pub fn plms_step(
    z: &Tensor,
    t: usize,
    t_next: usize,
    eps_now: &Tensor,
    mut state: PlmsState,
    sched: &NoiseSchedule,
) -> Result<(Tensor, PlmsState)> {
    let order = (state.history.len() + 1).min(4);
    let weights = AB_WEIGHTS[order - 1];
    let mut combined = eps_now.scale(weights[0]);
    for (w, prior) in weights[1..].iter().zip(&state.history) {
        combined = combined.add(&prior.scale(*w));
    }
    let z_next = ddim_step(z, t, t_next, &combined, sched)?;
    state.history.insert(0, eps_now.stop_gradient());
    state.history.truncate(4);
    Ok((z_next, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    Ddim,
    Plms,
}

impl SampleMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SampleMethod::Ddim => "ddim",
            SampleMethod::Plms => "plms",
        }
    }

    pub fn parse(s: &str) -> Result<SampleMethod> {
        match s {
            "ddim" => Ok(SampleMethod::Ddim),
            "plms" => Ok(SampleMethod::Plms),
            other => Err(CoreError::InvalidPlan(format!("unknown sample method '{other}'"))),
        }
    }
}

/// Latents of one sampling run: entry i is the state at `times[i]`, and one
/// final entry holds the clean-sample reconstruction from the last
/// evaluation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<usize>,
    pub latents: Vec<Tensor>,
}

impl Trajectory {
    pub fn terminal(&self) -> &Tensor {
        self.latents.last().expect("trajectory always holds at least the initial latent")
    }
}

/// Runs a plan from `z_init` (the state at `times[0]`). The callable
/// produces the combined noise prediction for a step; the sampler stays
/// guidance-agnostic beyond passing the plan's mode tag through.
///
/// Every plan time gets an evaluation. Interior evaluations drive a jump to
/// the next time; the final one (always at step 0) feeds the clean-sample
/// reconstruction, which is the identity at sigma = 0 but keeps the guided
/// evaluation count equal to the plan length.
pub fn sample(
    z_init: &Tensor,
    plan: &StepPlan,
    eps_fn: &mut dyn FnMut(&Tensor, usize, GuidanceMode) -> Result<Tensor>,
    sched: &NoiseSchedule,
    method: SampleMethod,
) -> Result<Trajectory> {
    sched.check_step(plan.times()[0])?;
    let mut latents = Vec::with_capacity(plan.len() + 1);
    let mut z = z_init.clone();
    latents.push(z.clone());
    let mut plms = PlmsState::new();

    for i in 0..plan.len() - 1 {
        let (t, t_next) = (plan.times()[i], plan.times()[i + 1]);
        let eps = eps_fn(&z, t, plan.modes()[i])?;
        z = match method {
            SampleMethod::Ddim => ddim_step(&z, t, t_next, &eps, sched)?,
            SampleMethod::Plms => {
                let (z_next, next_state) = plms_step(&z, t, t_next, &eps, plms, sched)?;
                plms = next_state;
                z_next
            }
        };
        latents.push(z.clone());
    }

    let t_last = *plan.times().last().unwrap();
    let eps = eps_fn(&z, t_last, *plan.modes().last().unwrap())?;
    latents.push(reconstruct_clean(&z, t_last, &eps, sched)?);

    Ok(Trajectory { times: plan.times().to_vec(), latents })
}
