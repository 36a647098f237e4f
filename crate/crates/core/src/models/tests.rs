use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::CoreError;
use crate::metrics::cosine;
use crate::mixture::{MixtureDataset, MixtureParams};
use crate::models::*;
use crate::oracle::AnalyticMixture;
use crate::schedule::{NoiseSchedule, ScheduleKind};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        steps: 400,
        batch: 64,
        hidden: vec![32, 32],
        log_every: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn config_defaults_and_validation() {
    let d = TrainConfig::default();
    assert_eq!((d.steps, d.batch), (20_000, 256));
    assert_eq!(d.lr, 1e-3);
    assert_eq!(d.drop_prob, 0.1);
    assert_eq!(d.hidden, vec![128, 128, 128]);
    assert_eq!((d.time_embed_dim, d.class_embed_dim), (16, 8));
    assert!(d.validate().is_ok());
    assert!(TrainConfig { steps: 0, ..d.clone() }.validate().is_err());
    assert!(TrainConfig { drop_prob: 1.5, ..d.clone() }.validate().is_err());
    assert!(TrainConfig { lr: 0.0, ..d.clone() }.validate().is_err());
    assert!(TrainConfig { time_embed_dim: 7, ..d.clone() }.validate().is_err());
    assert!(TrainConfig { hidden: vec![], ..d }.validate().is_err());
}

#[test]
fn time_embedding_is_bounded_and_separates_steps() {
    let emb = time_embedding(&[0, 1, 50, 999], 16);
    assert_eq!(emb.shape(), &[4, 16]);
    assert!(emb.data().iter().all(|v| v.abs() <= 1.0));
    // Row 0 embeds t=0: all sines 0, all cosines 1.
    assert!(emb.data()[..8].iter().all(|&v| v == 0.0));
    assert!(emb.data()[8..16].iter().all(|&v| v == 1.0));
    // Distinct steps map to distinct rows.
    for i in 0..4 {
        for j in i + 1..4 {
            let a = &emb.data()[i * 16..(i + 1) * 16];
            let b = &emb.data()[j * 16..(j + 1) * 16];
            assert_ne!(a, b, "rows {i} and {j} collide");
        }
    }
}

#[test]
fn mlp_shapes_and_smoothness() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mlp = Mlp::new(&[3, 8, 2], &mut rng);
    assert_eq!(mlp.num_params(), 4);
    let x = Tensor::randn(vec![5, 3], &mut rng);
    let y = mlp.forward(&x, &mlp.params.iter().collect::<Vec<_>>());
    assert_eq!(y.shape(), &[5, 2]);
}

/// Gradient of the squared prediction norm with respect to z must match
/// central finite differences through the full network.
#[test]
fn eval_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let model = EpsModel::new(2, 3, &[16, 16], 8, 4, &mut rng);
    let z0 = Tensor::randn(vec![1, 2], &mut rng);

    let f = |z_data: &[f64]| -> f64 {
        let z = Tensor::row(z_data.to_vec());
        let out = model.eval_one(&z, 37, Some(1)).unwrap();
        out.data().iter().map(|v| v * v).sum()
    };

    let tape = Tape::new();
    let z = tape.watch(&z0);
    let out = model.eval_one(&z, 37, Some(1)).unwrap();
    let loss = out.square().sum();
    let grad = tape.backward(&loss, &[&z]).unwrap()[0].clone();

    let h = 1e-5;
    for i in 0..2 {
        let mut plus = z0.data().to_vec();
        let mut minus = z0.data().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let scale = fd.abs().max(1.0);
        assert!(
            (grad.data()[i] - fd).abs() / scale < 1e-4,
            "coordinate {i}: tape {} vs fd {fd}",
            grad.data()[i]
        );
    }
}

#[test]
fn null_class_uses_the_null_embedding_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let model = EpsModel::new(2, 3, &[8], 4, 4, &mut rng);
    let z = Tensor::randn(vec![1, 2], &mut rng);
    let null_out = model.eval_one(&z, 10, None).unwrap();
    // Manual forward with embedding row 0 spliced in.
    let temb = time_embedding(&[10], model.time_embed_dim());
    let row0 = Tensor::row(model.class_embed.data()[..model.class_embed_dim()].to_vec());
    let input = Tensor::concat_cols(&[&z, &temb, &row0]);
    let manual = model.mlp.forward(&input, &model.mlp.params.iter().collect::<Vec<_>>());
    assert_eq!(null_out.data(), manual.data());
    // Conditioning on a real class changes the output.
    let cond_out = model.eval_one(&z, 10, Some(2)).unwrap();
    assert_ne!(null_out.data(), cond_out.data());
}

#[test]
fn unknown_class_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let model = EpsModel::new(2, 3, &[8], 4, 4, &mut rng);
    let z = Tensor::randn(vec![1, 2], &mut rng);
    assert!(matches!(
        model.eval_one(&z, 10, Some(3)),
        Err(CoreError::UnknownClass { class: 3, num_classes: 3 })
    ));
    let clf = NoisedClassifier::new(2, 3, &[8], 4, &mut rng);
    assert!(matches!(
        clf.class_logp(&z, 10, 5),
        Err(CoreError::UnknownClass { class: 5, num_classes: 3 })
    ));
}

#[test]
fn classifier_log_probs_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let clf = NoisedClassifier::new(2, 5, &[16], 8, &mut rng);
    for trial in 0..20 {
        let z = Tensor::randn(vec![3, 2], &mut rng).scale(3.0);
        let lp = clf.log_probs(&z, &[trial % 100, 50, 99]).unwrap();
        for r in 0..3 {
            let row = &lp.data()[r * 5..(r + 1) * 5];
            let lse = {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            };
            assert!(lse.abs() < 1e-8, "row {r}: logsumexp {lse}");
        }
    }
}

#[test]
fn training_is_bit_deterministic() {
    let sched = NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap();
    let data =
        MixtureDataset::generate(MixtureParams::ring(2, 4.0, 0.3), 2000, 60).unwrap();
    let cfg = TrainConfig { steps: 60, ..small_cfg() };
    let a = train_eps(&data, &sched, &cfg).unwrap();
    let b = train_eps(&data, &sched, &cfg).unwrap();
    for (pa, pb) in a.model.params().iter().zip(b.model.params().iter()) {
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(a.history, b.history);
}

#[test]
fn conditioning_dropout_fraction_concentrates() {
    let sched = NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap();
    let data =
        MixtureDataset::generate(MixtureParams::ring(2, 4.0, 0.3), 2000, 61).unwrap();
    // 200 steps x 64 = 12800 examples; Bernoulli(0.1) concentrates well
    // within +-0.01.
    let cfg = TrainConfig { steps: 200, ..small_cfg() };
    let out = train_eps(&data, &sched, &cfg).unwrap();
    assert!((out.null_fraction - 0.1).abs() < 0.01, "null fraction {}", out.null_fraction);
    // Dropping every label makes the fraction exactly one.
    let cfg = TrainConfig { steps: 20, drop_prob: 1.0, ..small_cfg() };
    let out = train_eps(&data, &sched, &cfg).unwrap();
    assert_eq!(out.null_fraction, 1.0);
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let sched = NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap();
    // A single corrupt sample poisons some batch early on.
    let mut data =
        MixtureDataset::generate(MixtureParams::ring(2, 4.0, 0.3), 50, 62).unwrap();
    data.samples[7].0[1] = f64::INFINITY;
    let cfg = TrainConfig { steps: 200, ..small_cfg() };
    match train_eps(&data, &sched, &cfg) {
        Err(CoreError::NonFiniteLoss { step, loss }) => {
            assert!(step >= 1 && !loss.is_finite());
        }
        other => panic!("expected a non-finite loss abort, got {other:?}"),
    }
    match train_classifier(&data, &sched, &cfg) {
        Err(CoreError::NonFiniteLoss { .. }) => {}
        other => panic!("expected a non-finite loss abort, got {other:?}"),
    }
}

/// Short training on a single Gaussian: the learned unconditional
/// prediction should align with the closed-form optimum across the
/// schedule interior, and the Monte Carlo objective should approach the
/// analytic predictor's floor.
#[test]
fn short_training_tracks_the_analytic_optimum() {
    let sched = Arc::new(NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap());
    let params = MixtureParams {
        means: vec![vec![1.5, -0.5]],
        stds: vec![0.6],
        class_probs: vec![1.0],
    };
    let data = MixtureDataset::generate(params.clone(), 4000, 63).unwrap();
    let cfg = TrainConfig { steps: 1200, drop_prob: 0.1, ..small_cfg() };
    let out = train_eps(&data, &sched, &cfg).unwrap();
    let oracle = AnalyticMixture::new(params.clone(), sched.clone()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut cosines = Vec::new();
    for tenth in 1..=9 {
        let t = tenth * 10;
        for _ in 0..20 {
            let x = Tensor::row(vec![1.5, -0.5]);
            let noise = Tensor::randn(vec![1, 2], &mut rng);
            let z = sched.corrupt(&x, t, &noise).unwrap();
            let learned = out.model.eval_one(&z, t, None).unwrap();
            let exact = oracle.optimal_eps(&z, t, None).unwrap();
            cosines.push(cosine(learned.data(), exact.data()).unwrap());
        }
    }
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    assert!(mean > 0.95, "mean cosine vs analytic optimum {mean}");

    // Objective gap: the trained model's Monte Carlo loss should be within
    // a modest factor of the analytic predictor's irreducible floor, and
    // never beat it.
    let t_grid: Vec<usize> = (1..=9).map(|k| k * 10).collect();
    let model = &out.model;
    let trained_loss = mc_eps_loss(
        &|z, ts, cs| model.eval(z, ts, cs),
        &params,
        &sched,
        &t_grid,
        400,
        cfg.drop_prob,
        65,
    )
    .unwrap();
    let oracle_ref = &oracle;
    let floor = mc_eps_loss(
        &|z, ts, cs| {
            // Per-row optimal prediction under the same conditioning.
            let mut rows = Vec::with_capacity(ts.len());
            for r in 0..ts.len() {
                let zr = Tensor::row(z.data()[r * 2..(r + 1) * 2].to_vec());
                rows.push(oracle_ref.optimal_eps(&zr, ts[r], cs[r])?);
            }
            Ok(Tensor::concat_rows(&rows.iter().collect::<Vec<_>>()))
        },
        &params,
        &sched,
        &t_grid,
        400,
        cfg.drop_prob,
        65,
    )
    .unwrap();
    assert!(
        trained_loss >= floor * 0.99,
        "trained loss {trained_loss} should not beat the analytic floor {floor}"
    );
    assert!(
        trained_loss < floor * 1.2,
        "trained loss {trained_loss} vs floor {floor}: gap too large for this setup"
    );
}

/// Short classifier training on two well-separated classes: near-perfect
/// at the clean end, near-prior at the noisy end, and cross-entropy close
/// to the exact posterior's.
#[test]
fn short_classifier_training_approaches_bayes() {
    let sched = Arc::new(NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap());
    let params = MixtureParams::ring(2, 4.0, 0.3);
    let data = MixtureDataset::generate(params.clone(), 4000, 66).unwrap();
    let cfg = TrainConfig { steps: 3000, ..small_cfg() };
    let out = train_classifier(&data, &sched, &cfg).unwrap();
    let oracle = AnalyticMixture::new(params.clone(), sched.clone()).unwrap();

    // Clean end: classify the component means.
    for c in 0..2 {
        let z = Tensor::row(params.means[c].clone());
        let lp = out.model.log_probs(&z, &[0]).unwrap();
        assert!(lp.data()[c].exp() > 0.95, "class {c} posterior {}", lp.data()[c].exp());
    }

    // Noisy end: the exact posterior collapses toward the prior (deep
    // noise destroys class information) and the learned one tracks it on
    // average.
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let mut bayes_dev: f64 = 0.0;
    let mut gap_sum = 0.0;
    for _ in 0..50 {
        let z = Tensor::randn(vec![1, 2], &mut rng);
        let learned = out.model.log_probs(&z, &[100]).unwrap();
        let exact = oracle.log_posterior(&z, 100).unwrap();
        bayes_dev = bayes_dev.max((exact.data()[0].exp() - 0.5).abs());
        gap_sum += (learned.data()[0].exp() - exact.data()[0].exp()).abs();
    }
    assert!(bayes_dev < 0.05, "exact posterior should be near the prior, deviates {bayes_dev}");
    let mean_gap = gap_sum / 50.0;
    assert!(mean_gap < 0.15, "learned posterior off the exact one by {mean_gap} at the noisy end");

    // Cross-entropy within a small gap of the exact posterior on shared
    // draws, and never below it.
    let t_grid: Vec<usize> = (0..=9).map(|k| k * 10).collect();
    let model = &out.model;
    let learned_ce =
        mc_classifier_ce(&|z, ts| model.log_probs(z, ts), &params, &sched, &t_grid, 400, 68)
            .unwrap();
    let oracle_ref = &oracle;
    let bayes_ce = mc_classifier_ce(
        &|z, ts| {
            let mut rows = Vec::with_capacity(ts.len());
            for r in 0..ts.len() {
                let zr = Tensor::row(z.data()[r * 2..(r + 1) * 2].to_vec());
                rows.push(oracle_ref.log_posterior(&zr, ts[r])?);
            }
            Ok(Tensor::concat_rows(&rows.iter().collect::<Vec<_>>()))
        },
        &params,
        &sched,
        &t_grid,
        400,
        68,
    )
    .unwrap();
    assert!(
        learned_ce >= bayes_ce - 0.02,
        "learned CE {learned_ce} materially beats Bayes {bayes_ce}: evaluation is broken"
    );
    assert!(
        learned_ce - bayes_ce < 0.1,
        "learned CE {learned_ce} vs Bayes {bayes_ce}: gap too large for this setup"
    );
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, 100).unwrap();
    let params = MixtureParams::ring(3, 4.0, 0.3);
    let data = MixtureDataset::generate(params.clone(), 500, 69).unwrap();
    let cfg = TrainConfig { steps: 30, ..small_cfg() };
    let eps = train_eps(&data, &sched, &cfg).unwrap().model;
    let clf = train_classifier(&data, &sched, &cfg).unwrap().model;

    let ckpt = Checkpoint::new(&sched, params, cfg).with_eps(&eps).with_classifier(&clf);
    let dir = std::env::temp_dir().join("guidelab-ckpt-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("round_trip.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    std::fs::remove_file(&path).ok();

    assert_eq!(loaded.version, CHECKPOINT_VERSION);
    assert_eq!(loaded.schedule_steps, 100);
    let eps2 = loaded.load_eps().unwrap();
    let clf2 = loaded.load_classifier().unwrap();
    for (a, b) in eps.params().iter().zip(eps2.params().iter()) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    for (a, b) in clf.params().iter().zip(clf2.params().iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    // Identical predictions after reload.
    let z = Tensor::row(vec![0.3, -0.8]);
    assert_eq!(
        eps.eval_one(&z, 50, Some(1)).unwrap().data(),
        eps2.eval_one(&z, 50, Some(1)).unwrap().data()
    );

    // A checkpoint without stored weights refuses to rebuild models.
    let empty = Checkpoint::new(&sched, MixtureParams::ring(3, 4.0, 0.3), small_cfg());
    assert!(matches!(empty.load_eps(), Err(CoreError::Checkpoint(_))));
}
