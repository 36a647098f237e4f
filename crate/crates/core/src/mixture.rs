//! Toy data: labeled isotropic Gaussian mixtures.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Mixture of isotropic Gaussians with one class per component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureParams {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    pub class_probs: Vec<f64>,
}

impl MixtureParams {
    /// Components spaced evenly on a circle; the default geometry. Class c
    /// sits at angle 2*pi*c/num_classes.
    pub fn ring(num_classes: usize, radius: f64, std: f64) -> MixtureParams {
        let means = (0..num_classes)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                vec![radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        MixtureParams {
            means,
            stds: vec![std; num_classes],
            class_probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(CoreError::InvalidMixture("no components".into()));
        }
        let dim = self.means[0].len();
        if dim == 0 {
            return Err(CoreError::InvalidMixture("zero-dimensional means".into()));
        }
        if self.means.iter().any(|m| m.len() != dim) {
            return Err(CoreError::InvalidMixture("components disagree on dimension".into()));
        }
        if self.stds.len() != self.means.len() || self.class_probs.len() != self.means.len() {
            return Err(CoreError::InvalidMixture(
                "means, stds and class_probs must have equal length".into(),
            ));
        }
        if self.stds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(CoreError::InvalidMixture("stds must be positive and finite".into()));
        }
        let total: f64 = self.class_probs.iter().sum();
        if self.class_probs.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidMixture(format!(
                "class_probs must be positive and sum to 1, got sum {total}"
            )));
        }
        Ok(())
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(CoreError::UnknownClass { class, num_classes: self.num_classes() });
        }
        Ok(())
    }

    /// One labeled draw.
    pub fn draw<R: Rng>(&self, rng: &mut R, picker: &WeightedIndex<f64>) -> (Vec<f64>, usize) {
        let class = picker.sample(rng);
        let x = self.means[class]
            .iter()
            .map(|&mu| mu + self.stds[class] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, class)
    }
}

/// A frozen labeled sample set plus the parameters that generated it.
#[derive(Debug, Clone)]
pub struct MixtureDataset {
    pub params: MixtureParams,
    pub samples: Vec<(Vec<f64>, usize)>,
}

impl MixtureDataset {
    pub fn generate(params: MixtureParams, n: usize, seed: u64) -> Result<MixtureDataset> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picker = WeightedIndex::new(&params.class_probs)
            .map_err(|e| CoreError::InvalidMixture(e.to_string()))?;
        let samples = (0..n).map(|_| params.draw(&mut rng, &picker)).collect();
        Ok(MixtureDataset { params, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
