//! Seeded training loops and Monte Carlo objective estimators.

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{CoreError, Result};
use crate::mixture::MixtureDataset;
use crate::models::classifier::NoisedClassifier;
use crate::models::eps::EpsModel;
use crate::schedule::NoiseSchedule;

/// Training hyperparameters. One config drives both model kinds; the
/// classifier ignores the conditioning-dropout and class-embedding fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing a label with the null class per example.
    pub drop_prob: f64,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
    pub seed: u64,
    /// History granularity in steps; the final step is always logged.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            steps: 20_000,
            batch: 256,
            lr: 1e-3,
            drop_prob: 0.1,
            hidden: vec![128, 128, 128],
            time_embed_dim: 16,
            class_embed_dim: 8,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(CoreError::InvalidStudy("steps and batch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(CoreError::InvalidStudy(format!(
                "drop_prob must be in [0, 1], got {}",
                self.drop_prob
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::InvalidStudy(format!("lr must be positive, got {}", self.lr)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(CoreError::InvalidStudy(format!(
                "hidden widths must be non-empty and positive, got {:?}",
                self.hidden
            )));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(CoreError::InvalidStudy(format!(
                "time_embed_dim must be even and >= 2, got {}",
                self.time_embed_dim
            )));
        }
        if self.class_embed_dim == 0 || self.log_every == 0 {
            return Err(CoreError::InvalidStudy(
                "class_embed_dim and log_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with the standard bias correction; state lives here, parameter
/// data is updated in place.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(param_sizes: &[usize], lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(
            params.len(),
            grads.len(),
            "adam: {} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        );
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let data = p.data_mut();
            let g = g.data();
            assert_eq!(data.len(), g.len(), "adam: parameter {i} size mismatch");
            for j in 0..data.len() {
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g[j];
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = self.m[i][j] / bc1;
                let v_hat = self.v[i][j] / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// A trained model, its logged loss curve, and the realized fraction of
/// null-conditioned training examples (always 0 for the classifier).
#[derive(Debug, Clone)]
pub struct TrainOutput<M> {
    pub model: M,
    /// (step, batch loss) every `log_every` steps plus the final step.
    pub history: Vec<(usize, f64)>,
    pub null_fraction: f64,
}

struct Batch {
    z: Tensor,
    eps: Tensor,
    ts: Vec<usize>,
    labels: Vec<usize>,
    classes: Vec<Option<usize>>,
    dropped: usize,
}

/// Draws one noised batch: dataset rows with replacement, per-row steps
/// from `t_lo..=t_max`, fresh noise, optional label dropout.
fn draw_batch<R: Rng>(
    data: &MixtureDataset,
    sched: &NoiseSchedule,
    batch: usize,
    t_lo: usize,
    drop_prob: f64,
    rng: &mut R,
) -> Batch {
    let dim = data.params.dim();
    let mut x_rows = Vec::with_capacity(batch * dim);
    let mut labels = Vec::with_capacity(batch);
    let mut ts = Vec::with_capacity(batch);
    let mut classes = Vec::with_capacity(batch);
    let mut dropped = 0;
    for _ in 0..batch {
        let (x, c) = &data.samples[rng.gen_range(0..data.samples.len())];
        x_rows.extend_from_slice(x);
        labels.push(*c);
        ts.push(rng.gen_range(t_lo..=sched.t_max()));
        if drop_prob > 0.0 && rng.gen::<f64>() < drop_prob {
            classes.push(None);
            dropped += 1;
        } else {
            classes.push(Some(*c));
        }
    }
    let x = Tensor::from_vec(vec![batch, dim], x_rows);
    let eps = Tensor::randn(vec![batch, dim], rng);
    // Per-row corruption: alpha_t x + sigma_t eps with row-specific t.
    let alpha_col: Vec<f64> = ts.iter().map(|&t| sched.alpha(t)).collect();
    let sigma_col: Vec<f64> = ts.iter().map(|&t| sched.sigma(t)).collect();
    let z = x
        .mul_col(&Tensor::from_vec(vec![batch, 1], alpha_col))
        .add(&eps.mul_col(&Tensor::from_vec(vec![batch, 1], sigma_col)));
    Batch { z, eps, ts, labels, classes, dropped }
}

/// Loss-weight column for a batch of steps.
fn weight_col(sched: &NoiseSchedule, ts: &[usize]) -> Tensor {
    Tensor::from_vec(vec![ts.len(), 1], ts.iter().map(|&t| sched.loss_weight(t)).collect())
}

/// Trains a noise predictor by Monte Carlo regression: draw (x, c), noise
/// to a uniform step in 1..=T, predict the noise, descend the weighted
/// mean squared error. Labels drop to null with `drop_prob` so the same
/// network learns the unconditional branch. Deterministic given the seed.
pub fn train_eps(
    data: &MixtureDataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutput<EpsModel>> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(CoreError::InvalidStudy("empty training dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EpsModel::new(
        data.params.dim(),
        data.params.num_classes(),
        &cfg.hidden,
        cfg.time_embed_dim,
        cfg.class_embed_dim,
        &mut rng,
    );
    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    let mut adam = Adam::new(&sizes, cfg.lr);
    let mut history = Vec::new();
    let mut total_dropped = 0usize;

    for step in 1..=cfg.steps {
        let b = draw_batch(data, sched, cfg.batch, 1, cfg.drop_prob, &mut rng);
        total_dropped += b.dropped;

        let tape = Tape::new();
        let watched: Vec<Tensor> = model.params().iter().map(|p| tape.watch(p)).collect();
        let watched_refs: Vec<&Tensor> = watched.iter().collect();
        let pred = model.eval_with_params(&watched_refs, &b.z, &b.ts, &b.classes)?;
        let loss = pred
            .sub(&b.eps)
            .square()
            .sum_rows()
            .mul_col(&weight_col(sched, &b.ts))
            .sum()
            .scale(1.0 / cfg.batch as f64);
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(CoreError::NonFiniteLoss { step, loss: loss_val });
        }
        let grads = tape.backward(&loss, &watched_refs)?;
        adam.step(&mut model.params_mut(), &grads);
        if step % cfg.log_every == 0 || step == cfg.steps {
            history.push((step, loss_val));
        }
    }

    let null_fraction = total_dropped as f64 / (cfg.steps * cfg.batch) as f64;
    Ok(TrainOutput { model, history, null_fraction })
}

/// Trains the noised classifier by cross-entropy on noised points at
/// uniform steps in 0..=T (step 0 included: the clean decision boundary is
/// part of the contract).
pub fn train_classifier(
    data: &MixtureDataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutput<NoisedClassifier>> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(CoreError::InvalidStudy("empty training dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = NoisedClassifier::new(
        data.params.dim(),
        data.params.num_classes(),
        &cfg.hidden,
        cfg.time_embed_dim,
        &mut rng,
    );
    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    let mut adam = Adam::new(&sizes, cfg.lr);
    let mut history = Vec::new();

    for step in 1..=cfg.steps {
        let b = draw_batch(data, sched, cfg.batch, 0, 0.0, &mut rng);

        let tape = Tape::new();
        let watched: Vec<Tensor> = model.params().iter().map(|p| tape.watch(p)).collect();
        let watched_refs: Vec<&Tensor> = watched.iter().collect();
        let log_probs = model.log_probs_with_params(&watched_refs, &b.z, &b.ts)?;
        let loss =
            log_probs.take_per_row(&b.labels).sum().scale(-1.0 / cfg.batch as f64);
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(CoreError::NonFiniteLoss { step, loss: loss_val });
        }
        let grads = tape.backward(&loss, &watched_refs)?;
        adam.step(&mut model.params_mut(), &grads);
        if step % cfg.log_every == 0 || step == cfg.steps {
            history.push((step, loss_val));
        }
    }

    Ok(TrainOutput { model, history, null_fraction: 0.0 })
}

/// Monte Carlo estimate of the noise-regression objective for any
/// predictor, stratified over a step grid with `per_t` draws each. The
/// draw stream depends only on (mixture, grid, per_t, seed), so a trained
/// model and the analytic optimum are scored on identical samples.
pub fn mc_eps_loss(
    predict: &dyn Fn(&Tensor, &[usize], &[Option<usize>]) -> Result<Tensor>,
    data_params: &crate::mixture::MixtureParams,
    sched: &NoiseSchedule,
    t_grid: &[usize],
    per_t: usize,
    drop_prob: f64,
    seed: u64,
) -> Result<f64> {
    if t_grid.is_empty() || per_t == 0 {
        return Err(CoreError::InvalidStudy("empty evaluation grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(&data_params.class_probs)
        .map_err(|e| CoreError::InvalidMixture(e.to_string()))?;
    let dim = data_params.dim();
    let mut total = 0.0;
    for &t in t_grid {
        sched.check_step(t)?;
        let mut x_rows = Vec::with_capacity(per_t * dim);
        let mut classes = Vec::with_capacity(per_t);
        for _ in 0..per_t {
            let (x, c) = data_params.draw(&mut rng, &picker);
            x_rows.extend_from_slice(&x);
            classes.push(if drop_prob > 0.0 && rng.gen::<f64>() < drop_prob {
                None
            } else {
                Some(c)
            });
        }
        let x = Tensor::from_vec(vec![per_t, dim], x_rows);
        let eps = Tensor::randn(vec![per_t, dim], &mut rng);
        let z = x.scale(sched.alpha(t)).add(&eps.scale(sched.sigma(t)));
        let ts = vec![t; per_t];
        let pred = predict(&z, &ts, &classes)?;
        let loss = pred
            .sub(&eps)
            .square()
            .sum_rows()
            .mul_col(&weight_col(sched, &ts))
            .sum()
            .scale(1.0 / per_t as f64);
        total += loss.item();
    }
    Ok(total / t_grid.len() as f64)
}

/// Monte Carlo cross-entropy of any class log-probability table over a
/// step grid; same deterministic-draw contract as `mc_eps_loss`.
pub fn mc_classifier_ce(
    log_probs: &dyn Fn(&Tensor, &[usize]) -> Result<Tensor>,
    data_params: &crate::mixture::MixtureParams,
    sched: &NoiseSchedule,
    t_grid: &[usize],
    per_t: usize,
    seed: u64,
) -> Result<f64> {
    if t_grid.is_empty() || per_t == 0 {
        return Err(CoreError::InvalidStudy("empty evaluation grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(&data_params.class_probs)
        .map_err(|e| CoreError::InvalidMixture(e.to_string()))?;
    let dim = data_params.dim();
    let mut total = 0.0;
    for &t in t_grid {
        sched.check_step(t)?;
        let mut x_rows = Vec::with_capacity(per_t * dim);
        let mut labels = Vec::with_capacity(per_t);
        for _ in 0..per_t {
            let (x, c) = data_params.draw(&mut rng, &picker);
            x_rows.extend_from_slice(&x);
            labels.push(c);
        }
        let x = Tensor::from_vec(vec![per_t, dim], x_rows);
        let eps = Tensor::randn(vec![per_t, dim], &mut rng);
        let z = x.scale(sched.alpha(t)).add(&eps.scale(sched.sigma(t)));
        let lp = log_probs(&z, &vec![t; per_t])?;
        total += lp.take_per_row(&labels).sum().scale(-1.0 / per_t as f64).item();
    }
    Ok(total / t_grid.len() as f64)
}
