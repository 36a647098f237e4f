//! Score sources for the studies.
//!
//! A backend bundles the three callables every study needs (unconditional
//! noise prediction, conditional noise prediction, noised class
//! log-probability) behind one dispatch point, so the same study code runs
//! against the closed-form mixture and against trained networks. The
//! analytic mixture stays attached in both cases: it supplies the reference
//! guide for similarity scoring and the terminal-sample class decisions,
//! which must not depend on the model under test.

use crate::error::{CoreError, Result};
use crate::models::{EpsModel, NoisedClassifier};
use crate::oracle::AnalyticMixture;
use crate::{Tape, Tensor};

use super::GuideKind;

/// Where noise predictions and classifier scores come from.
pub enum Backend<'a> {
    /// Closed-form mixture scores. Exact up to floating point.
    Analytic { oracle: &'a AnalyticMixture },
    /// Trained networks, with the mixture kept alongside for references.
    Trained {
        oracle: &'a AnalyticMixture,
        eps: &'a EpsModel,
        classifier: &'a NoisedClassifier,
    },
}

impl<'a> Backend<'a> {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Analytic { .. } => "analytic",
            Backend::Trained { .. } => "trained",
        }
    }

    /// The mixture behind this backend, used for reference guides,
    /// terminal class decisions, and drawing data.
    pub fn oracle(&self) -> &'a AnalyticMixture {
        match self {
            Backend::Analytic { oracle } | Backend::Trained { oracle, .. } => oracle,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.oracle().params().num_classes()
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(CoreError::UnknownClass { class, num_classes: self.num_classes() });
        }
        Ok(())
    }

    /// Unconditional noise prediction at (z, t). Differentiable in z.
    pub fn uncond_eps(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        match self {
            Backend::Analytic { oracle } => oracle.optimal_eps(z, t, None),
            Backend::Trained { eps, .. } => eps.eval_one(z, t, None),
        }
    }

    /// Class-conditional noise prediction at (z, t). Differentiable in z.
    pub fn cond_eps(&self, z: &Tensor, t: usize, class: usize) -> Result<Tensor> {
        self.check_class(class)?;
        match self {
            Backend::Analytic { oracle } => oracle.optimal_eps(z, t, Some(class)),
            Backend::Trained { eps, .. } => eps.eval_one(z, t, Some(class)),
        }
    }

    /// Log p_t(class | z) as a scalar tensor. Differentiable in z.
    pub fn class_logp(&self, z: &Tensor, t: usize, class: usize) -> Result<Tensor> {
        self.check_class(class)?;
        match self {
            Backend::Analytic { oracle } => Ok(oracle.log_posterior(z, t)?.take_col(class).sum()),
            Backend::Trained { classifier, .. } => classifier.class_logp(z, t, class),
        }
    }

    /// Clean-data (t = 0) class log-probability. Both backends use the
    /// exact posterior at zero noise: the quantity is well defined there
    /// and keeping it fixed isolates the effect of the denoising chain.
    pub fn clean_logp(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        self.check_class(class)?;
        Ok(self.oracle().log_posterior(x, 0)?.take_col(class).sum())
    }

    /// Gradient of log p_t(class | z) with respect to z, detached.
    pub fn posterior_grad(&self, z: &Tensor, t: usize, class: usize) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let zw = tape.watch(&z.stop_gradient());
        let logp = self.class_logp(&zw, t, class)?;
        let grads = tape.backward(&logp, &[&zw])?;
        Ok(grads[0].data().to_vec())
    }

    /// The exact signal a guide kind approximates at (z, t): the explicit
    /// conditional prediction for the denoising-target kind, and the
    /// posterior gradient at the evaluation point for the classifier kind.
    /// The clean-data kind is scored against the conditional prediction it
    /// would replace in a sampler.
    pub fn reference_signal(
        &self,
        z: &Tensor,
        t: usize,
        class: usize,
        kind: GuideKind,
    ) -> Result<Vec<f64>> {
        match kind {
            GuideKind::MpcConditional | GuideKind::CleanData => {
                Ok(self.cond_eps(&z.stop_gradient(), t, class)?.data().to_vec())
            }
            GuideKind::MpcClassifier => self.posterior_grad(z, t, class),
        }
    }
}
