//! Closed-form reference quantities for Gaussian-mixture data under a
//! variance-preserving schedule.
//!
//! With data x | c ~ N(mu_c, s_c^2 I) and z_t = alpha_t x + sigma_t eps, the
//! corrupted marginal per class is N(alpha_t mu_c, v_c I) with
//! v_c = alpha_t^2 s_c^2 + sigma_t^2. Posterior class weights, the optimal
//! noise prediction E[eps | z_t, c] = sigma_t (z_t - alpha_t mu_c) / v_c,
//! and its posterior-weighted unconditional counterpart are all exact.
//!
//! Everything is expressed in tape ops, so any output can be differentiated
//! with respect to z. That is what lets the lookahead guides run against the
//! oracle with no trained model in the loop.

use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::mixture::MixtureParams;
use crate::schedule::NoiseSchedule;

#[derive(Clone)]
pub struct AnalyticMixture {
    params: MixtureParams,
    sched: Arc<NoiseSchedule>,
}

impl AnalyticMixture {
    pub fn new(params: MixtureParams, sched: Arc<NoiseSchedule>) -> Result<AnalyticMixture> {
        params.validate()?;
        Ok(AnalyticMixture { params, sched })
    }

    pub fn params(&self) -> &MixtureParams {
        &self.params
    }

    pub fn schedule(&self) -> &Arc<NoiseSchedule> {
        &self.sched
    }

    fn component_variance(&self, t: usize, c: usize) -> f64 {
        let a = self.sched.alpha(t);
        let s = self.sched.sigma(t);
        a * a * self.params.stds[c] * self.params.stds[c] + s * s
    }

    /// log p_t(z, c) per component: log pi_c + log N(z; alpha mu_c, v_c I),
    /// shaped `[m, num_classes]`.
    fn component_log_joint(&self, z: &Tensor, t: usize) -> Tensor {
        let dim = self.params.dim() as f64;
        let alpha = self.sched.alpha(t);
        let cols: Vec<Tensor> = (0..self.params.num_classes())
            .map(|c| {
                let v = self.component_variance(t, c);
                let shifted_mean: Vec<f64> =
                    self.params.means[c].iter().map(|mu| -alpha * mu).collect();
                let diff = z.add_row(&Tensor::from_vec(vec![shifted_mean.len()], shifted_mean));
                let constant = self.params.class_probs[c].ln()
                    - 0.5 * dim * (2.0 * std::f64::consts::PI * v).ln();
                diff.square()
                    .sum_rows()
                    .scale(-0.5 / v)
                    .add_scalar(constant)
            })
            .collect();
        let refs: Vec<&Tensor> = cols.iter().collect();
        Tensor::concat_cols(&refs)
    }

    /// Exact Bayes posterior log p_t(c | z) over classes, shaped `[m, C]`.
    /// Rows exponentiate to 1.
    pub fn log_posterior(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        self.sched.check_step(t)?;
        Ok(self.component_log_joint(z, t).log_softmax_rows())
    }

    /// log p_t(z) as an `[m, 1]` column.
    pub fn log_marginal(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        self.sched.check_step(t)?;
        let joint = self.component_log_joint(z, t);
        let post = joint.log_softmax_rows();
        // log-sum-exp over classes recovered from any single column.
        Ok(joint.take_col(0).sub(&post.take_col(0)))
    }

    /// log p_t(z | c) as an `[m, 1]` column.
    pub fn class_log_density(&self, z: &Tensor, t: usize, class: usize) -> Result<Tensor> {
        self.sched.check_step(t)?;
        self.params.check_class(class)?;
        let v = self.component_variance(t, class);
        let alpha = self.sched.alpha(t);
        let dim = self.params.dim() as f64;
        let shifted: Vec<f64> = self.params.means[class].iter().map(|mu| -alpha * mu).collect();
        let diff = z.add_row(&Tensor::from_vec(vec![shifted.len()], shifted));
        Ok(diff
            .square()
            .sum_rows()
            .scale(-0.5 / v)
            .add_scalar(-0.5 * dim * (2.0 * std::f64::consts::PI * v).ln()))
    }

    /// E[eps | z_t, c] for a class, or the posterior-weighted unconditional
    /// prediction E[eps | z_t] when no class is given. At t = 0 both vanish.
    pub fn optimal_eps(&self, z: &Tensor, t: usize, class: Option<usize>) -> Result<Tensor> {
        self.sched.check_step(t)?;
        match class {
            Some(c) => {
                self.params.check_class(c)?;
                Ok(self.component_eps(z, t, c))
            }
            None => {
                let weights = self.log_posterior(z, t)?.exp();
                let mut acc = Tensor::zeros(z.shape().to_vec());
                for c in 0..self.params.num_classes() {
                    let eps_c = self.component_eps(z, t, c);
                    acc = acc.add(&eps_c.mul_col(&weights.take_col(c)));
                }
                Ok(acc)
            }
        }
    }

    fn component_eps(&self, z: &Tensor, t: usize, c: usize) -> Tensor {
        let alpha = self.sched.alpha(t);
        let sigma = self.sched.sigma(t);
        let v = self.component_variance(t, c);
        let shifted: Vec<f64> = self.params.means[c].iter().map(|mu| -alpha * mu).collect();
        z.add_row(&Tensor::from_vec(vec![shifted.len()], shifted)).scale(sigma / v)
    }

    /// The exact conditional noise prediction; the reference every
    /// approximate guide is scored against.
    pub fn true_guide(&self, z: &Tensor, t: usize, class: usize) -> Result<Tensor> {
        self.optimal_eps(z, t, Some(class))
    }

    /// Bayes-optimal class of a clean point; used for purity scoring.
    pub fn bayes_class(&self, x: &[f64]) -> Result<usize> {
        let z = Tensor::row(x.to_vec());
        let post = self.log_posterior(&z, 0)?;
        let mut best = 0;
        for c in 1..self.params.num_classes() {
            if post.data()[c] > post.data()[best] {
                best = c;
            }
        }
        Ok(best)
    }
}
