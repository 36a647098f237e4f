//! Variance-preserving noise schedules over discrete steps.
//!
//! A schedule is indexed by `t in 0..=steps`. `alpha[0] = 1, sigma[0] = 0`
//! exactly: step 0 is clean data. `alpha` is strictly decreasing, `sigma`
//! strictly increasing, and `alpha[t]^2 + sigma[t]^2 = 1` everywhere.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};

/// Per-step betas are clamped here so cumulative signal never hits zero,
/// which keeps the clean-sample reconstruction (z - sigma*eps)/alpha finite
/// at every step.
const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Betas linear in t, 1e-4..0.02 at 1000 steps, rescaled to other step
    /// counts so total corruption stays comparable.
    LinearBeta,
    /// Squared-cosine cumulative signal.
    Cosine,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::LinearBeta => "linear-beta",
            ScheduleKind::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<ScheduleKind> {
        match s {
            "linear-beta" => Ok(ScheduleKind::LinearBeta),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(CoreError::InvalidStudy(format!("unknown schedule kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    steps: usize,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    loss_weight: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule with `steps >= 2` discrete corruption levels.
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
        if steps < 2 {
            return Err(CoreError::ScheduleTooShort { steps });
        }
        let betas = match kind {
            ScheduleKind::LinearBeta => linear_betas(steps),
            ScheduleKind::Cosine => cosine_betas(steps),
        };
        let mut alpha = Vec::with_capacity(steps + 1);
        let mut sigma = Vec::with_capacity(steps + 1);
        alpha.push(1.0);
        sigma.push(0.0);
        let mut alpha_bar = 1.0;
        for beta in betas {
            alpha_bar *= 1.0 - beta;
            alpha.push(alpha_bar.sqrt());
            sigma.push((1.0 - alpha_bar).sqrt());
        }
        Ok(NoiseSchedule { kind, steps, alpha, sigma, loss_weight: vec![1.0; steps + 1] })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Largest step index; corruption at this step is (near) pure noise.
    pub fn t_max(&self) -> usize {
        self.steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(CoreError::StepOutOfRange { t, max: self.steps });
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn loss_weight(&self, t: usize) -> f64 {
        self.loss_weight[t]
    }

    /// Reweights the per-step training loss; the default is uniform.
    pub fn set_loss_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.steps + 1 {
            return Err(CoreError::InvalidStudy(format!(
                "loss weights need {} entries, got {}",
                self.steps + 1,
                w.len()
            )));
        }
        self.loss_weight = w;
        Ok(())
    }

    /// Forward corruption `alpha_t * x + sigma_t * eps`.
    pub fn corrupt(&self, x: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_step(t)?;
        Ok(x.scale(self.alpha[t]).add(&eps.scale(self.sigma[t])))
    }

    /// Maps a fraction of total steps to a step index, ties rounding up
    /// toward the noisier side (0.875 of 100 steps -> step 88).
    pub fn frac_to_step(&self, frac: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(CoreError::InvalidPlan(format!("step fraction {frac} outside [0, 1]")));
        }
        Ok((frac * self.steps as f64).round() as usize)
    }
}

fn linear_betas(steps: usize) -> Vec<f64> {
    // Classic linear range is specified at 1000 steps; scale the per-step
    // beta by 1000/steps so alpha at t_max stays deep in the noise regime
    // for any step count.
    let (b0, b1) = (1e-4, 0.02);
    let scale = 1000.0 / steps as f64;
    (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            ((b0 + (b1 - b0) * frac) * scale).min(BETA_MAX)
        })
        .collect()
}

fn cosine_betas(steps: usize) -> Vec<f64> {
    let s = 0.008;
    let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let f0 = f(0.0);
    (1..=steps)
        .map(|t| {
            let beta = 1.0 - (f(t as f64) / f0) / (f((t - 1) as f64) / f0);
            beta.min(BETA_MAX)
        })
        .collect()
}
