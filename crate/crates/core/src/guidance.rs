//! Noise-prediction combinators and lookahead guides.
//!
//! The guided prediction fed to a sampler is the linear extrapolation
//! (1+w) * eps_cond - w * eps_uncond. When no conditional signal exists at
//! the current time, a lookahead guide stands in for eps_cond: starting
//! from z_t, simulate the unconditional reverse process for `delta` steps
//! on a tape, apply explicit conditional feedback at t - delta, and pull
//! the feedback back to t as a gradient with respect to z_t. The result xi
//! is optionally rescaled to the norm of the unconditional prediction so
//! the combination stays on the scale the sampler expects.
//!
//! Two feedback forms are implemented: a noised-classifier log-probability
//! (maximized, so xi points toward higher class probability) and a
//! conditional noise model (xi descends the squared distance to the
//! one-step denoising target, with gradients blocked through the target).
//! A third, report-only guide denoises all the way to the data space and
//! applies a clean-data classifier there.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{CoreError, Result};
use crate::metrics::{cosine, l2_norm};
use crate::sampler::ddim_step;
use crate::schedule::NoiseSchedule;

/// Noise-prediction callable (z, t) -> eps. Must record onto z's tape when
/// z is tracked; both the analytic oracle and trained models do.
pub type EpsFn<'a> = dyn Fn(&Tensor, usize) -> Result<Tensor> + Sync + 'a;

/// Scalar class log-probability callable (z, t) -> log p_t(c | z) with the
/// class pre-bound. Same tape contract as `EpsFn`.
pub type LogProbFn<'a> = dyn Fn(&Tensor, usize) -> Result<Tensor> + Sync + 'a;

/// Clean-data classifier callable x -> log p_0(c | x), class pre-bound.
pub type CleanLogProbFn<'a> = dyn Fn(&Tensor) -> Result<Tensor> + Sync + 'a;

/// How a classifier gradient is scaled before entering the combination.
/// `Sigma` multiplies by sigma_t, which makes the combined prediction equal
/// the exact conditional one on the analytic mixture; `Unit` applies the
/// gradient at face value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierScale {
    Unit,
    #[default]
    Sigma,
}

impl ClassifierScale {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierScale::Unit => "unit",
            ClassifierScale::Sigma => "sigma",
        }
    }

    pub fn parse(s: &str) -> Result<ClassifierScale> {
        match s {
            "unit" => Ok(ClassifierScale::Unit),
            "sigma" => Ok(ClassifierScale::Sigma),
            other => Err(CoreError::InvalidGuidance(format!(
                "unknown classifier scale '{other}' (expected unit or sigma)"
            ))),
        }
    }
}

/// Knobs shared by every guide call.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Guidance weight in the final combination.
    pub w: f64,
    /// Lookahead distance in schedule steps; 0 evaluates feedback in place.
    pub delta: usize,
    /// Unconditional sub-steps used to traverse the lookahead.
    pub k_denoise: usize,
    /// Rescale xi to the unconditional prediction's norm.
    pub rescale: bool,
    /// Scaling mode for explicit classifier guidance.
    pub classifier_scale: ClassifierScale,
}

impl Default for GuidanceConfig {
    fn default() -> GuidanceConfig {
        GuidanceConfig {
            w: 2.0,
            delta: 0,
            k_denoise: 5,
            rescale: true,
            classifier_scale: ClassifierScale::Sigma,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) {
            return Err(CoreError::InvalidGuidance(format!(
                "guidance weight must be >= 0, got {}",
                self.w
            )));
        }
        if self.k_denoise == 0 || self.k_denoise > 10 {
            return Err(CoreError::InvalidGuidance(format!(
                "k_denoise must be in 1..=10, got {}",
                self.k_denoise
            )));
        }
        Ok(())
    }

    fn check_call(&self, t: usize, sched: &NoiseSchedule) -> Result<()> {
        self.validate()?;
        sched.check_step(t)?;
        if self.delta > t {
            return Err(CoreError::InvalidGuidance(format!(
                "lookahead {} exceeds current step {t}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// One guide evaluation: the direction to use in place of the conditional
/// prediction, its norm before any rescaling, and an optional similarity
/// score against a reference direction.
#[derive(Debug, Clone)]
pub struct GuideResult {
    pub xi: Tensor,
    pub raw_norm: f64,
    pub cosine_vs_reference: Option<f64>,
}

impl GuideResult {
    /// Fills the similarity slot against a reference direction.
    pub fn with_reference(mut self, reference: &[f64]) -> Result<GuideResult> {
        self.cosine_vs_reference = Some(cosine(self.xi.data(), reference)?);
        Ok(self)
    }
}

/// Guided combination (1+w) * eps_cond - w * eps_uncond. Written as the
/// plain formula so w = 0 reproduces eps_cond bit for bit.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, w: f64) -> Tensor {
    eps_cond.scale(1.0 + w).sub(&eps_uncond.scale(w))
}

/// Explicit classifier guidance: shifts the unconditional prediction
/// against the class-probability gradient. `Sigma` mode reproduces the
/// score decomposition eps_cond = eps_uncond - sigma_t * grad log p_t(c|z)
/// exactly on the analytic mixture.
pub fn classifier_guide(
    eps_uncond: &Tensor,
    grad_logp: &Tensor,
    t: usize,
    mode: ClassifierScale,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_step(t)?;
    let scaled = match mode {
        ClassifierScale::Unit => grad_logp.clone(),
        ClassifierScale::Sigma => grad_logp.scale(sched.sigma(t)),
    };
    Ok(eps_uncond.sub(&scaled))
}

/// Evaluation times for a lookahead: k_denoise uniform sub-steps from t
/// down to t - delta, rounded to integer steps and deduplicated. Always
/// starts at t and ends exactly at t - delta; delta = 0 collapses to [t].
pub(crate) fn lookahead_subtimes(t: usize, delta: usize, k_denoise: usize) -> Vec<usize> {
    let mut times = Vec::with_capacity(k_denoise + 1);
    for i in 0..=k_denoise {
        let ti = (t as f64 - (i as f64 * delta as f64) / k_denoise as f64).round() as usize;
        if times.last() != Some(&ti) {
            times.push(ti);
        }
    }
    times
}

/// Unconditional DDIM chain through `times`, recording on z's tape.
/// Divergence is caught per sub-step so failures name where the chain blew
/// up.
fn denoise_chain(
    z: &Tensor,
    times: &[usize],
    uncond_eps: &EpsFn,
    sched: &NoiseSchedule,
    delta: usize,
) -> Result<Tensor> {
    let mut cur = z.clone();
    for w in times.windows(2) {
        let eps = uncond_eps(&cur, w[0])?;
        cur = ddim_step(&cur, w[0], w[1], &eps, sched)?;
        if !cur.all_finite() {
            return Err(CoreError::GuideFailure {
                t: times[0],
                delta,
                detail: format!(
                    "latent went non-finite on sub-step {} -> {} of chain {times:?}",
                    w[0], w[1]
                ),
            });
        }
    }
    Ok(cur)
}

/// Shared tail of every guide: finiteness check, norm bookkeeping, and the
/// optional rescale to the unconditional prediction's norm at (z, t).
fn finish_guide(
    xi_raw: Tensor,
    z: &Tensor,
    t: usize,
    sub_times: &[usize],
    cfg: &GuidanceConfig,
    uncond_eps: &EpsFn,
) -> Result<GuideResult> {
    if !xi_raw.all_finite() {
        return Err(CoreError::GuideFailure {
            t,
            delta: cfg.delta,
            detail: format!("non-finite guide gradient; sub-step times {sub_times:?}"),
        });
    }
    let raw_norm = l2_norm(xi_raw.data());
    if !cfg.rescale {
        return Ok(GuideResult { xi: xi_raw, raw_norm, cosine_vs_reference: None });
    }
    if raw_norm == 0.0 {
        return Err(CoreError::GuideFailure {
            t,
            delta: cfg.delta,
            detail: "zero guide gradient cannot be rescaled".into(),
        });
    }
    let eps_u = uncond_eps(&z.stop_gradient(), t)?;
    let xi = xi_raw.scale(l2_norm(eps_u.data()) / raw_norm);
    Ok(GuideResult { xi, raw_norm, cosine_vs_reference: None })
}

/// Lookahead guide from a noised classifier: simulate the unconditional
/// reverse process to t - delta, evaluate the class log-probability there,
/// and ascend its gradient with respect to z_t.
pub fn mpc_guide_classifier(
    z: &Tensor,
    t: usize,
    cfg: &GuidanceConfig,
    class_logp: &LogProbFn,
    uncond_eps: &EpsFn,
    sched: &NoiseSchedule,
) -> Result<GuideResult> {
    cfg.check_call(t, sched)?;
    let times = lookahead_subtimes(t, cfg.delta, cfg.k_denoise);
    let tape = Tape::new();
    let z0 = tape.watch(&z.stop_gradient());
    let z_lo = denoise_chain(&z0, &times, uncond_eps, sched, cfg.delta)?;
    let logp = class_logp(&z_lo, t - cfg.delta)?;
    if !logp.all_finite() {
        return Err(CoreError::GuideFailure {
            t,
            delta: cfg.delta,
            detail: format!("classifier log-probability non-finite at step {}", t - cfg.delta),
        });
    }
    let grads = tape.backward(&logp, &[&z0])?;
    finish_guide(grads[0].clone(), z, t, &times, cfg, uncond_eps)
}

/// Lookahead guide from a conditional noise model: simulate to t - delta,
/// take the one-step denoising target z* = z_lo + eps_cond(z_lo) with
/// gradients blocked through it, and descend the squared distance to z*.
/// At delta = 0 this reduces to 2 * eps_cond(z, t) before rescaling.
pub fn mpc_guide_conditional(
    z: &Tensor,
    t: usize,
    cfg: &GuidanceConfig,
    cond_eps: &EpsFn,
    uncond_eps: &EpsFn,
    sched: &NoiseSchedule,
) -> Result<GuideResult> {
    cfg.check_call(t, sched)?;
    let times = lookahead_subtimes(t, cfg.delta, cfg.k_denoise);
    let tape = Tape::new();
    let z0 = tape.watch(&z.stop_gradient());
    let z_lo = denoise_chain(&z0, &times, uncond_eps, sched, cfg.delta)?;
    let target = z_lo.add(&cond_eps(&z_lo, t - cfg.delta)?).stop_gradient();
    if !target.all_finite() {
        return Err(CoreError::GuideFailure {
            t,
            delta: cfg.delta,
            detail: format!("denoising target non-finite at step {}", t - cfg.delta),
        });
    }
    let loss = z_lo.sub(&target).square().sum();
    let grads = tape.backward(&loss, &[&z0])?;
    finish_guide(grads[0].neg(), z, t, &times, cfg, uncond_eps)
}

/// Report-only guide: denoise all the way to the data space (the full
/// span t -> 0 in at most k_denoise sub-steps) and ascend a clean-data
/// classifier's log-probability there.
pub fn clean_data_guide(
    z: &Tensor,
    t: usize,
    clean_logp: &CleanLogProbFn,
    uncond_eps: &EpsFn,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
) -> Result<GuideResult> {
    cfg.validate()?;
    sched.check_step(t)?;
    let times = lookahead_subtimes(t, t, cfg.k_denoise);
    let tape = Tape::new();
    let z0 = tape.watch(&z.stop_gradient());
    let x0 = denoise_chain(&z0, &times, uncond_eps, sched, t)?;
    let logp = clean_logp(&x0)?;
    if !logp.all_finite() {
        return Err(CoreError::GuideFailure {
            t,
            delta: t,
            detail: "clean-data classifier log-probability non-finite".into(),
        });
    }
    let grads = tape.backward(&logp, &[&z0])?;
    finish_guide(grads[0].clone(), z, t, &times, cfg, uncond_eps)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::metrics::median;
    use crate::mixture::MixtureParams;
    use crate::oracle::AnalyticMixture;
    use crate::schedule::{NoiseSchedule, ScheduleKind};

    fn setup() -> (AnalyticMixture, Arc<NoiseSchedule>) {
        let sched = Arc::new(NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap());
        let oracle = AnalyticMixture::new(MixtureParams::ring(4, 4.0, 0.3), sched.clone()).unwrap();
        (oracle, sched)
    }

    /// Gradient of the exact class log-posterior, the reference direction
    /// for the classifier-style guides.
    fn analytic_grad_logp(oracle: &AnalyticMixture, z: &[f64], t: usize, c: usize) -> Vec<f64> {
        let tape = Tape::new();
        let zt = tape.watch(&Tensor::row(z.to_vec()));
        let logp = oracle.log_posterior(&zt, t).unwrap().take_col(c).sum();
        tape.backward(&logp, &[&zt]).unwrap()[0].data().to_vec()
    }

    #[test]
    fn combine_at_zero_weight_is_bitwise_identity() {
        let c = Tensor::row(vec![0.123456789, -4.2e-7, 3.0e8, -0.0]);
        let u = Tensor::row(vec![9.9, -1.0e12, 0.5, 7.0]);
        let out = cfg_combine(&c, &u, 0.0);
        for (a, b) in out.data().iter().zip(c.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn combine_fixed_point_and_hand_value() {
        let e = Tensor::row(vec![0.4, -1.1]);
        for w in [0.0, 0.7, 2.0, 13.5] {
            let out = cfg_combine(&e, &e, w);
            for (a, b) in out.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let c = Tensor::row(vec![1.0, 0.0]);
        let u = Tensor::row(vec![0.0, 1.0]);
        let out = cfg_combine(&c, &u, 2.0);
        assert_eq!(out.data(), &[3.0, -2.0]);
    }

    #[test]
    fn classifier_guide_modes() {
        let (_, sched) = setup();
        let eps_u = Tensor::row(vec![0.3, -0.2]);
        let g = Tensor::row(vec![1.0, 2.0]);
        let zero = Tensor::row(vec![0.0, 0.0]);
        let same =
            classifier_guide(&eps_u, &zero, 500, ClassifierScale::Sigma, &sched).unwrap();
        assert_eq!(same.data(), eps_u.data());
        let unit = classifier_guide(&eps_u, &g, 500, ClassifierScale::Unit, &sched).unwrap();
        let sig = classifier_guide(&eps_u, &g, 500, ClassifierScale::Sigma, &sched).unwrap();
        let s = sched.sigma(500);
        for i in 0..2 {
            assert!((unit.data()[i] - (eps_u.data()[i] - g.data()[i])).abs() < 1e-15);
            assert!((sig.data()[i] - (eps_u.data()[i] - s * g.data()[i])).abs() < 1e-15);
        }
    }

    /// Sigma-scaled classifier guidance rebuilds the exact conditional
    /// prediction on the analytic mixture.
    #[test]
    fn sigma_scaled_guide_matches_optimal_conditional_eps() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..25 {
            let t = 100 + (trial * 37) % 900;
            let c = trial % 4;
            let z = Tensor::randn(vec![1, 2], &mut rng);
            let grad = Tensor::row(analytic_grad_logp(&oracle, z.data(), t, c));
            let eps_u = oracle.optimal_eps(&z, t, None).unwrap();
            let combined =
                classifier_guide(&eps_u, &grad, t, ClassifierScale::Sigma, &sched).unwrap();
            let eps_c = oracle.optimal_eps(&z, t, Some(c)).unwrap();
            for (a, b) in combined.data().iter().zip(eps_c.data()) {
                assert!((a - b).abs() < 1e-6, "t={t} c={c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn config_validation() {
        let d = GuidanceConfig::default();
        assert_eq!(d.w, 2.0);
        assert_eq!(d.k_denoise, 5);
        assert!(d.rescale);
        assert_eq!(d.classifier_scale, ClassifierScale::Sigma);
        assert!(d.validate().is_ok());
        assert!(GuidanceConfig { w: -0.1, ..d.clone() }.validate().is_err());
        assert!(GuidanceConfig { k_denoise: 0, ..d.clone() }.validate().is_err());
        assert!(GuidanceConfig { k_denoise: 11, ..d.clone() }.validate().is_err());
        assert!(GuidanceConfig { w: f64::NAN, ..d }.validate().is_err());
    }

    #[test]
    fn lookahead_subtimes_shape() {
        assert_eq!(lookahead_subtimes(800, 0, 5), vec![800]);
        assert_eq!(lookahead_subtimes(800, 200, 5), vec![800, 760, 720, 680, 640, 600]);
        assert_eq!(lookahead_subtimes(1000, 900, 5), vec![1000, 820, 640, 460, 280, 100]);
        // Short spans collapse duplicate rounded times but keep endpoints.
        assert_eq!(lookahead_subtimes(10, 2, 5), vec![10, 9, 8]);
        assert_eq!(lookahead_subtimes(5, 5, 10), vec![5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn delta_beyond_current_step_is_rejected() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let cfg = GuidanceConfig { delta: 300, ..GuidanceConfig::default() };
        let uncond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, None);
        let cond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, Some(0));
        let z = Tensor::row(vec![0.5, 0.5]);
        let err = mpc_guide_conditional(&z, 200, &cfg, &cond, &uncond, &sched).unwrap_err();
        assert!(matches!(err, CoreError::InvalidGuidance(_)));
    }

    /// With no lookahead the conditional-feedback guide is exactly twice
    /// the explicit conditional prediction.
    #[test]
    fn conditional_guide_at_zero_delta_is_twice_explicit() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let cfg = GuidanceConfig { delta: 0, rescale: false, ..GuidanceConfig::default() };
        let uncond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, None);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..10 {
            let t = 50 + trial * 95;
            let c = trial % 4;
            let cond = move |z: &Tensor, tt: usize| oracle.optimal_eps(z, tt, Some(c));
            let z = Tensor::randn(vec![1, 2], &mut rng);
            let g = mpc_guide_conditional(&z, t, &cfg, &cond, &uncond, &sched).unwrap();
            let eps_c = oracle.optimal_eps(&z, t, Some(c)).unwrap();
            for (xi, e) in g.xi.data().iter().zip(eps_c.data()) {
                assert!((xi - 2.0 * e).abs() < 1e-9, "t={t}: {xi} vs {}", 2.0 * e);
            }
            let cos = cosine(g.xi.data(), eps_c.data()).unwrap();
            assert!((cos - 1.0).abs() < 1e-6);
        }
    }

    /// With no lookahead the classifier-feedback guide is parallel to the
    /// exact posterior gradient.
    #[test]
    fn classifier_guide_at_zero_delta_matches_posterior_gradient() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let cfg = GuidanceConfig { delta: 0, rescale: false, ..GuidanceConfig::default() };
        let uncond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, None);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for trial in 0..10 {
            let t = 100 + trial * 90;
            let c = trial % 4;
            let logp = move |z: &Tensor, tt: usize| {
                Ok(oracle.log_posterior(z, tt)?.take_col(c).sum())
            };
            let z = Tensor::randn(vec![1, 2], &mut rng);
            let g = mpc_guide_classifier(&z, t, &cfg, &logp, &uncond, &sched).unwrap();
            let reference = analytic_grad_logp(&oracle, z.data(), t, c);
            let cos = cosine(g.xi.data(), &reference).unwrap();
            assert!((cos - 1.0).abs() < 1e-6, "t={t} cos={cos}");
            // No denoising at all: the gradient itself matches.
            for (a, b) in g.xi.data().iter().zip(&reference) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rescale_hits_unconditional_norm_and_keeps_direction() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let uncond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, None);
        let cond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, Some(1));
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10 {
            let z = Tensor::randn(vec![1, 2], &mut rng);
            let t = 600;
            let raw_cfg =
                GuidanceConfig { delta: 120, rescale: false, ..GuidanceConfig::default() };
            let scaled_cfg = GuidanceConfig { rescale: true, ..raw_cfg.clone() };
            let raw = mpc_guide_conditional(&z, t, &raw_cfg, &cond, &uncond, &sched).unwrap();
            let scaled =
                mpc_guide_conditional(&z, t, &scaled_cfg, &cond, &uncond, &sched).unwrap();
            let eps_u_norm = l2_norm(uncond(&z, t).unwrap().data());
            assert!((l2_norm(scaled.xi.data()) - eps_u_norm).abs() < 1e-9);
            // Rescaling preserves direction.
            let cos = cosine(scaled.xi.data(), raw.xi.data()).unwrap();
            assert!((cos - 1.0).abs() < 1e-12);
            // raw_norm reports the pre-rescale norm in both cases.
            assert!((scaled.raw_norm - l2_norm(raw.xi.data())).abs() < 1e-9);
        }
    }

    /// Guide quality decays with lookahead distance: median cosine against
    /// the exact conditional prediction is high for short lookahead and
    /// non-increasing (within noise) as delta grows.
    #[test]
    fn conditional_guide_quality_decays_with_lookahead() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let t = 1000;
        let uncond = |z: &Tensor, tt: usize| oracle.optimal_eps(z, tt, None);
        let mut medians = Vec::new();
        for tenth in 1..=9 {
            let delta = tenth * 100;
            let cfg = GuidanceConfig { delta, ..GuidanceConfig::default() };
            let mut cosines = Vec::new();
            for rep in 0..24 {
                let c = rep % 4;
                let cond = move |z: &Tensor, tt: usize| oracle.optimal_eps(z, tt, Some(c));
                let mut rng =
                    ChaCha8Rng::seed_from_u64(crate::seeding::derive_seed(45, &[tenth as u64, rep as u64]));
                let z = Tensor::randn(vec![1, 2], &mut rng);
                let g = mpc_guide_conditional(&z, t, &cfg, &cond, &uncond, &sched)
                    .unwrap()
                    .with_reference(oracle.true_guide(&z, t, c).unwrap().data())
                    .unwrap();
                cosines.push(g.cosine_vs_reference.unwrap());
            }
            medians.push(median(&cosines));
        }
        assert!(medians[0] > 0.9, "short lookahead should track the explicit guide: {medians:?}");
        // Re-derived floor for this mixture at the default sub-step budget;
        // the guide still points the right general way even at 0.9 T. A
        // budget of 10 sub-steps lifts the far-end median above 0.55.
        assert!(*medians.last().unwrap() > 0.2, "far lookahead floor: {medians:?}");
        for w in medians.windows(2) {
            assert!(w[1] <= w[0] + 0.01, "quality should not recover with distance: {medians:?}");
        }
    }

    /// Finer lookahead simulation cannot hurt: median cosine against the
    /// explicit guide is non-decreasing in the sub-step count.
    #[test]
    fn finer_simulation_improves_the_guide() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let t = 1000;
        let delta = 500;
        let uncond = |z: &Tensor, tt: usize| oracle.optimal_eps(z, tt, None);
        let mut medians = Vec::new();
        for k in [1, 5, 10] {
            let cfg = GuidanceConfig { delta, k_denoise: k, ..GuidanceConfig::default() };
            let mut cosines = Vec::new();
            for rep in 0..64 {
                let c = rep % 4;
                let cond = move |z: &Tensor, tt: usize| oracle.optimal_eps(z, tt, Some(c));
                let mut rng =
                    ChaCha8Rng::seed_from_u64(crate::seeding::derive_seed(46, &[rep as u64]));
                let z = Tensor::randn(vec![1, 2], &mut rng);
                let g = mpc_guide_conditional(&z, t, &cfg, &cond, &uncond, &sched)
                    .unwrap()
                    .with_reference(oracle.true_guide(&z, t, c).unwrap().data())
                    .unwrap();
                cosines.push(g.cosine_vs_reference.unwrap());
            }
            medians.push(median(&cosines));
        }
        assert!(
            medians[0] <= medians[1] && medians[1] <= medians[2],
            "medians should be non-decreasing in sub-step count: {medians:?}"
        );
    }

    /// The clean-data guide at t = 0 is the bare clean-classifier gradient,
    /// and its chain length is capped by the sub-step budget.
    #[test]
    fn clean_data_guide_degenerate_and_capped() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let cfg = GuidanceConfig { rescale: false, ..GuidanceConfig::default() };
        let clean = |x: &Tensor| Ok(oracle.log_posterior(x, 0)?.take_col(2).sum());
        let calls = AtomicUsize::new(0);
        let uncond = |z: &Tensor, t: usize| {
            calls.fetch_add(1, Ordering::Relaxed);
            oracle.optimal_eps(z, t, None)
        };
        let z = Tensor::row(vec![0.8, -1.4]);
        let g = clean_data_guide(&z, 0, &clean, &uncond, &cfg, &sched).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 0, "no denoising at t = 0");
        let reference = analytic_grad_logp(&oracle, z.data(), 0, 2);
        for (a, b) in g.xi.data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9);
        }
        // From deep noise the chain spends exactly k_denoise model calls.
        let g = clean_data_guide(&z, 1000, &clean, &uncond, &cfg, &sched).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), cfg.k_denoise);
        assert!(g.xi.all_finite());
    }

    #[test]
    fn non_finite_feedback_is_reported_with_context() {
        let (oracle, sched) = setup();
        let oracle = &oracle;
        let cfg = GuidanceConfig { delta: 100, ..GuidanceConfig::default() };
        let uncond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, None);
        let bad_logp = |_z: &Tensor, _t: usize| Ok(Tensor::scalar(f64::NEG_INFINITY));
        let z = Tensor::row(vec![0.1, 0.1]);
        let err = mpc_guide_classifier(&z, 800, &cfg, &bad_logp, &uncond, &sched).unwrap_err();
        match err {
            CoreError::GuideFailure { t, delta, .. } => {
                assert_eq!((t, delta), (800, 100));
            }
            other => panic!("unexpected error {other:?}"),
        }
        // A diverging dynamics model is caught mid-chain with the failing
        // sub-step named.
        let blowup = |z: &Tensor, _t: usize| Ok(z.scale(f64::MAX));
        let cond = |z: &Tensor, t: usize| oracle.optimal_eps(z, t, Some(0));
        let err = mpc_guide_conditional(&z, 800, &cfg, &cond, &blowup, &sched).unwrap_err();
        match err {
            CoreError::GuideFailure { detail, .. } => {
                assert!(detail.contains("sub-step"), "detail: {detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Guided combination amplifies direction error: for a slightly rotated
    /// conditional prediction and an unconditional prediction aligned with
    /// the reference, the combined outputs are strictly less similar than
    /// the inputs. Scale-invariance makes the effect vanish when the
    /// unconditional part is zero.
    #[test]
    fn combination_amplifies_guide_divergence() {
        let a = [1.0, 0.0];
        let theta = (0.9999f64).acos();
        let a_rot = [theta.cos(), theta.sin()];
        let w = 2.0;
        for gamma in [0.5, 1.0, 4.0 / 3.0, 2.0] {
            let u = [gamma * a[0], gamma * a[1]];
            let lhs = cfg_combine(&Tensor::row(a.to_vec()), &Tensor::row(u.to_vec()), w);
            let rhs = cfg_combine(&Tensor::row(a_rot.to_vec()), &Tensor::row(u.to_vec()), w);
            let c = cosine(lhs.data(), rhs.data()).unwrap();
            assert!(
                c < 0.9999,
                "gamma={gamma}: combined similarity {c} should drop below input 0.9999"
            );
        }
        // gamma = 0 removes the shared part; similarity passes through.
        let lhs = cfg_combine(&Tensor::row(a.to_vec()), &Tensor::row(vec![0.0, 0.0]), w);
        let rhs = cfg_combine(&Tensor::row(a_rot.to_vec()), &Tensor::row(vec![0.0, 0.0]), w);
        let c = cosine(lhs.data(), rhs.data()).unwrap();
        assert!((c - 0.9999).abs() < 1e-9);
    }
}

