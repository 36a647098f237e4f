//! Versioned JSON checkpoints with bit-exact weight round trips.
//!
//! Floats serialize through the shortest decimal form that parses back to
//! the identical bit pattern, so save followed by load reproduces weights
//! exactly. A checkpoint carries everything needed to rebuild its models
//! and re-derive every dependent quantity: schedule, mixture, training
//! config, and seed.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};
use crate::mixture::MixtureParams;
use crate::models::classifier::NoisedClassifier;
use crate::models::eps::EpsModel;
use crate::models::train::TrainConfig;
use crate::schedule::{NoiseSchedule, ScheduleKind};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Plain tensor payload: shape plus row-major data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn from_tensor(t: &Tensor) -> TensorData {
        TensorData { shape: t.shape().to_vec(), data: t.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.data.clone())
    }
}

/// Everything one training run produces and everything needed to rerun it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub schedule_kind: ScheduleKind,
    pub schedule_steps: usize,
    pub mixture: MixtureParams,
    pub train: TrainConfig,
    /// Noise-predictor weights in `EpsModel::params()` order.
    pub eps_weights: Option<Vec<TensorData>>,
    /// Classifier weights in `NoisedClassifier::params()` order.
    pub classifier_weights: Option<Vec<TensorData>>,
}

impl Checkpoint {
    pub fn new(
        sched: &NoiseSchedule,
        mixture: MixtureParams,
        train: TrainConfig,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            schedule_kind: sched.kind(),
            schedule_steps: sched.t_max(),
            mixture,
            train,
            eps_weights: None,
            classifier_weights: None,
        }
    }

    pub fn with_eps(mut self, model: &EpsModel) -> Checkpoint {
        self.eps_weights =
            Some(model.params().iter().map(|p| TensorData::from_tensor(p)).collect());
        self
    }

    pub fn with_classifier(mut self, model: &NoisedClassifier) -> Checkpoint {
        self.classifier_weights =
            Some(model.params().iter().map(|p| TensorData::from_tensor(p)).collect());
        self
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule_kind, self.schedule_steps)
    }

    /// Rebuilds the noise predictor from stored weights.
    pub fn load_eps(&self) -> Result<EpsModel> {
        let weights = self
            .eps_weights
            .as_ref()
            .ok_or_else(|| CoreError::Checkpoint("no noise-predictor weights stored".into()))?;
        // Architecture comes from the config; weights overwrite the fresh
        // initialization, so the throwaway rng never influences anything.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = EpsModel::new(
            self.mixture.dim(),
            self.mixture.num_classes(),
            &self.train.hidden,
            self.train.time_embed_dim,
            self.train.class_embed_dim,
            &mut rng,
        );
        restore(&mut model.params_mut(), weights, "noise predictor")?;
        Ok(model)
    }

    /// Rebuilds the noised classifier from stored weights.
    pub fn load_classifier(&self) -> Result<NoisedClassifier> {
        let weights = self
            .classifier_weights
            .as_ref()
            .ok_or_else(|| CoreError::Checkpoint("no classifier weights stored".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = NoisedClassifier::new(
            self.mixture.dim(),
            self.mixture.num_classes(),
            &self.train.hidden,
            self.train.time_embed_dim,
            &mut rng,
        );
        restore(&mut model.params_mut(), weights, "classifier")?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        ckpt.mixture.validate()?;
        Ok(ckpt)
    }
}

fn restore(params: &mut [&mut Tensor], weights: &[TensorData], what: &str) -> Result<()> {
    if params.len() != weights.len() {
        return Err(CoreError::Checkpoint(format!(
            "{what}: {} weight tensors stored but architecture has {}",
            weights.len(),
            params.len()
        )));
    }
    for (p, w) in params.iter_mut().zip(weights) {
        if p.shape() != w.shape.as_slice() {
            return Err(CoreError::Checkpoint(format!(
                "{what}: stored shape {:?} does not match architecture shape {:?}",
                w.shape,
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(&w.data);
    }
    Ok(())
}
