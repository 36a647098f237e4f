//! Acceptance gate: one test per shipping criterion, each asserting its
//! pinned tolerance and printing a PASS line with the achieved value (run
//! with --nocapture to see the lines; the per-test ok/FAILED verdicts
//! mirror them).
//!
//! Trained models are built once in a shared fixture. Every number printed
//! here is reproducible bit-for-bit: training, evaluation draws, and all
//! study seeds are fixed constants in this file.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};

use guidelab_core::experiments::{
    amplification_demo, restricted_divergence_csv, restricted_mmd_csv, restricted_samples_csv,
    restricted_summary_csv, run_guide, run_restricted, run_similarity, similarity_csv,
    similarity_curves_dat, Arm, Backend, GuideKind, ReportMeta, RestrictedConfig,
    SimilarityConfig,
};
use guidelab_core::guidance::{cfg_combine, GuidanceConfig};
use guidelab_core::metrics::{cosine, l2_distance, median, mmd_rbf};
use guidelab_core::mixture::{MixtureDataset, MixtureParams};
use guidelab_core::models::{
    mc_classifier_ce, train_classifier, train_eps, EpsModel, NoisedClassifier, TrainConfig,
};
use guidelab_core::oracle::AnalyticMixture;
use guidelab_core::sampler::{sample, GuidanceMode, SampleMethod, StepPlan};
use guidelab_core::schedule::{NoiseSchedule, ScheduleKind};
use guidelab_core::{Tape, Tensor};

const T_MAX: usize = 1000;

/// Shared fixture. The restricted-study mixture uses component std 0.15
/// rather than the 0.3 default: at 0.3 a 5-step explicit plan already
/// samples the mixture to within the MMD permutation noise floor, so the
/// arm orderings under test carry no signal. Tightening the components
/// puts the baseline in the step-count-limited regime the comparison is
/// about while keeping the same 4-class ring geometry.
struct Lab {
    sched: Arc<NoiseSchedule>,
    single: MixtureParams,
    single_oracle: AnalyticMixture,
    single_eps: EpsModel,
    ring_oracle: AnalyticMixture,
    tight_oracle: AnalyticMixture,
    tight_eps: EpsModel,
    tight_clf: NoisedClassifier,
}

static LAB: OnceLock<Lab> = OnceLock::new();

fn lab() -> &'static Lab {
    LAB.get_or_init(|| {
        let sched = Arc::new(NoiseSchedule::new(ScheduleKind::LinearBeta, T_MAX).unwrap());

        let single = MixtureParams {
            means: vec![vec![1.5, -0.5]],
            stds: vec![0.6],
            class_probs: vec![1.0],
        };
        let single_data = MixtureDataset::generate(single.clone(), 4096, 7).unwrap();
        let single_oracle = AnalyticMixture::new(single.clone(), sched.clone()).unwrap();
        let single_eps = train_eps(
            &single_data,
            &sched,
            &TrainConfig {
                steps: 3000,
                batch: 128,
                hidden: vec![64, 64],
                drop_prob: 0.0,
                seed: 1,
                log_every: 1000,
                ..TrainConfig::default()
            },
        )
        .unwrap()
        .model;

        let ring = MixtureParams::ring(4, 4.0, 0.3);
        let ring_oracle = AnalyticMixture::new(ring.clone(), sched.clone()).unwrap();

        let tight = MixtureParams::ring(4, 4.0, 0.15);
        let tight_data = MixtureDataset::generate(tight.clone(), 8192, 8).unwrap();
        let tight_oracle = AnalyticMixture::new(tight, sched.clone()).unwrap();
        let tight_eps = train_eps(
            &tight_data,
            &sched,
            &TrainConfig {
                steps: 12000,
                batch: 128,
                hidden: vec![64, 64],
                seed: 2,
                log_every: 2000,
                ..TrainConfig::default()
            },
        )
        .unwrap()
        .model;
        let tight_clf = train_classifier(
            &tight_data,
            &sched,
            &TrainConfig {
                steps: 3000,
                batch: 128,
                hidden: vec![64, 64],
                drop_prob: 0.0,
                seed: 3,
                log_every: 1000,
                ..TrainConfig::default()
            },
        )
        .unwrap()
        .model;

        Lab {
            sched,
            single,
            single_oracle,
            single_eps,
            ring_oracle,
            tight_oracle,
            tight_eps,
            tight_clf,
        }
    })
}

fn trained_backend(l: &Lab) -> Backend<'_> {
    Backend::Trained { oracle: &l.tight_oracle, eps: &l.tight_eps, classifier: &l.tight_clf }
}

/// Forward-corrupted draw from the data distribution at step t.
fn marginal_z(
    params: &MixtureParams,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let picker = WeightedIndex::new(&params.class_probs).unwrap();
    let (x, _) = params.draw(rng, &picker);
    let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::row(
        x.iter()
            .zip(&noise)
            .map(|(xi, ni)| sched.alpha(t) * xi + sched.sigma(t) * ni)
            .collect(),
    )
}

/// Criterion 1: reverse-mode gradients through a 5-step denoise chain with
/// the trained MLP match central finite differences, rel. err < 1e-3, over
/// 100 random inputs.
#[test]
fn criterion_1_autodiff_through_trained_denoise_chain() {
    let start = Instant::now();
    let l = lab();
    // Uniform sub-times spanning t=600 down to t=300 in 5 jumps.
    let times: Vec<usize> = (0..=5).map(|i| 600 - 60 * i).collect();

    let chain = |z: &Tensor| -> Tensor {
        let mut cur = z.clone();
        for w in times.windows(2) {
            let eps = l.single_eps.eval_one(&cur, w[0], None).unwrap();
            cur = guidelab_core::sampler::ddim_step(&cur, w[0], w[1], &eps, &l.sched).unwrap();
        }
        cur
    };
    let scalar = |coords: &[f64]| -> f64 {
        let out = chain(&Tensor::row(coords.to_vec()));
        out.data().iter().map(|v| v * v).sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_rel = 0.0f64;
    for case in 0..100 {
        // Scales 0.5/1/2 cover on-distribution and stretched inputs.
        let scale = [0.5, 1.0, 2.0][case % 3];
        let z: Vec<f64> = (0..2).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();

        let tape = Tape::new();
        let zw = tape.watch(&Tensor::row(z.clone()));
        let loss = chain(&zw).square().sum();
        let grad = tape.backward(&loss, &[&zw]).unwrap()[0].data().to_vec();

        let h = 1e-5;
        for dim in 0..2 {
            let mut hi = z.clone();
            let mut lo = z.clone();
            hi[dim] += h;
            lo[dim] -= h;
            let fd = (scalar(&hi) - scalar(&lo)) / (2.0 * h);
            let rel = (grad[dim] - fd).abs() / fd.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    assert!(max_rel < 1e-3, "max rel err {max_rel:.3e} >= 1e-3");
    println!(
        "PASS criterion 1: max rel err {max_rel:.3e} < 1e-3 \
         (100 inputs, 5-step trained-MLP chain, {:.1}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 2: the conditional lookahead guide at span 0 matches the
/// explicit conditional prediction in direction, cosine 1 +/- 1e-6, on the
/// analytic and the trained backend.
#[test]
fn criterion_2_zero_span_guide_matches_explicit_conditional() {
    let start = Instant::now();
    let l = lab();
    let backends = [Backend::Analytic { oracle: &l.ring_oracle }, trained_backend(l)];
    let cfg = GuidanceConfig { delta: 0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 1.0;
    for backend in &backends {
        for case in 0..25 {
            let t = rng.gen_range(1..=T_MAX);
            let z = Tensor::randn(vec![1, 2], &mut rng).scale(1.0 + (case % 3) as f64);
            let class = case % 4;
            let xi = run_guide(backend, GuideKind::MpcConditional, &z, t, class, &cfg)
                .unwrap()
                .xi;
            let explicit = backend.cond_eps(&z.stop_gradient(), t, class).unwrap();
            worst = worst.min(cosine(xi.data(), explicit.data()).unwrap());
        }
    }
    assert!((worst - 1.0).abs() <= 1e-6, "worst cosine {worst} outside 1 +/- 1e-6");
    println!(
        "PASS criterion 2: span-0 cosine with explicit conditional = {worst:.9} \
         (both backends, 50 cases, within 1 +/- 1e-6, {:.1}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 3: on the analytic mixture the conditional/unconditional
/// prediction difference equals -sigma_t * grad log p_t(c|z) to 1e-6 at
/// 1000 random (z, t).
#[test]
fn criterion_3_score_decomposition_identity() {
    let start = Instant::now();
    let l = lab();
    let backend = Backend::Analytic { oracle: &l.ring_oracle };
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut max_abs = 0.0f64;
    for case in 0..1000 {
        let t = rng.gen_range(1..=T_MAX);
        let scale = [0.5, 1.0, 2.0, 4.0][case % 4];
        let z = Tensor::randn(vec![1, 2], &mut rng).scale(scale);
        let class = case % 4;
        let ec = l.ring_oracle.optimal_eps(&z, t, Some(class)).unwrap();
        let eu = l.ring_oracle.optimal_eps(&z, t, None).unwrap();
        let grad = backend.posterior_grad(&z, t, class).unwrap();
        let sigma = l.sched.sigma(t);
        for i in 0..2 {
            let lhs = ec.data()[i] - eu.data()[i];
            let rhs = -sigma * grad[i];
            max_abs = max_abs.max((lhs - rhs).abs());
        }
    }
    assert!(max_abs < 1e-6, "max decomposition residual {max_abs:.3e} >= 1e-6");
    println!(
        "PASS criterion 3: max |(eps_c - eps_u) + sigma*grad| = {max_abs:.3e} < 1e-6 \
         (1000 points, {:.1}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 4: at t = T on the analytic oracle, the median conditional-
/// guide cosine over 60 replicates per span is monotone non-increasing in
/// the span (slack 0.01) and exceeds 0.9 at span 0.1T.
#[test]
fn criterion_4_similarity_declines_with_span() {
    let start = Instant::now();
    let l = lab();
    let backend = Backend::Analytic { oracle: &l.ring_oracle };
    // 4 classes x 15 replicates = 60 measurements per span.
    let cfg = SimilarityConfig {
        t_fracs: vec![1.0],
        delta_fracs: (1..=9).map(|i| i as f64 / 10.0).collect(),
        replicates: 15,
        guide_kinds: vec![GuideKind::MpcConditional],
        seed: 0,
        ..Default::default()
    };
    let records = run_similarity(&backend, &cfg).unwrap();
    assert!(records.iter().all(|r| !r.failed), "guide failures in similarity sweep");

    let mut medians = Vec::new();
    for i in 1..=9 {
        let d = i as f64 / 10.0;
        let cell: Vec<f64> =
            records.iter().filter(|r| r.delta_frac == d).map(|r| r.cosine).collect();
        assert_eq!(cell.len(), 60, "expected 60 replicates at span {d}");
        medians.push(median(&cell));
    }
    for pair in medians.windows(2) {
        assert!(
            pair[1] <= pair[0] + 0.01,
            "median rose beyond slack: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    assert!(medians[0] > 0.9, "median at span 0.1T = {} <= 0.9", medians[0]);
    println!(
        "PASS criterion 4: medians {} monotone within 0.01, first {:.4} > 0.9 ({:.1}s)",
        medians.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" "),
        medians[0],
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 5: the trained unconditional noise model on single-Gaussian
/// data reaches mean cosine > 0.99 against the closed-form optimum over
/// the t-grid {0.1T..0.9T}; the trained noised classifier sits within 0.05
/// nats of the Bayes cross-entropy.
#[test]
fn criterion_5_training_fidelity() {
    let start = Instant::now();
    let l = lab();

    // Evaluation draws come from the forward-corrupted data distribution,
    // the domain the objective actually trains on.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut coss = Vec::new();
    for tenth in 1..=9 {
        let t = tenth * 100;
        for _ in 0..64 {
            let z = marginal_z(&l.single, &l.sched, t, &mut rng);
            let pred = l.single_eps.eval_one(&z, t, None).unwrap();
            let opt = l.single_oracle.optimal_eps(&z, t, None).unwrap();
            coss.push(cosine(pred.data(), opt.data()).unwrap());
        }
    }
    let mean_cos: f64 = coss.iter().sum::<f64>() / coss.len() as f64;
    assert!(mean_cos > 0.99, "mean cosine {mean_cos:.5} <= 0.99");

    let t_grid: Vec<usize> = (1..=9).map(|i| i * 100).collect();
    let tight = l.tight_oracle.params().clone();
    let learned_ce = mc_classifier_ce(
        &|z, ts| l.tight_clf.log_probs(z, ts),
        &tight,
        &l.sched,
        &t_grid,
        2000,
        505,
    )
    .unwrap();
    let bayes_ce = mc_classifier_ce(
        &|z, ts| l.tight_oracle.log_posterior(z, ts[0]),
        &tight,
        &l.sched,
        &t_grid,
        2000,
        505,
    )
    .unwrap();
    let gap = learned_ce - bayes_ce;
    assert!(gap < 0.05, "classifier CE gap {gap:.4} nats >= 0.05");
    println!(
        "PASS criterion 5: eps mean cosine {mean_cos:.5} > 0.99; classifier CE \
         {learned_ce:.4} vs Bayes {bayes_ce:.4}, gap {gap:.4} < 0.05 nats ({:.1}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 6: restricted-guidance ordering on the trained 4-class
/// mixture at w=2 with 64 shared seeds. The lookahead arm must beat the
/// 5-step explicit baseline on MMD to the gold arm and on median per-seed
/// terminal distance to the 8-step reference.
#[test]
fn criterion_6_restricted_guidance_ordering() {
    let start = Instant::now();
    let l = lab();
    let backend = trained_backend(l);
    let cfg = RestrictedConfig {
        num_seeds: 64,
        guide_kind: GuideKind::MpcClassifier,
        seed: 0,
        ..Default::default()
    };
    let study = run_restricted(&backend, &cfg).unwrap();

    let failures: Vec<_> = study.runs.iter().filter(|r| r.failure.is_some()).collect();
    assert!(failures.is_empty(), "{} arm runs failed", failures.len());

    let summary = |arm: Arm| study.summaries.iter().find(|s| s.arm == arm).unwrap();
    let mmd_to_gold = |arm: Arm| {
        study
            .pairwise
            .iter()
            .find(|p| p.arm == arm && p.versus == Arm::Gold)
            .unwrap()
            .mmd
            .mmd2
    };

    let mpc_mmd = mmd_to_gold(Arm::Mpc);
    let base_mmd = mmd_to_gold(Arm::Baseline);
    let mpc_l2 = summary(Arm::Mpc).median_l2_to_reference;
    let base_l2 = summary(Arm::Baseline).median_l2_to_reference;

    assert!(mpc_mmd < base_mmd, "MMD to gold: mpc {mpc_mmd:.6} >= baseline {base_mmd:.6}");
    assert!(
        mpc_l2 < base_l2,
        "median L2 to reference: mpc {mpc_l2:.4} >= baseline {base_l2:.4}"
    );
    println!(
        "PASS criterion 6: MMD to gold mpc {mpc_mmd:+.5} < baseline {base_mmd:+.5}; \
         median L2 to reference mpc {mpc_l2:.4} < baseline {base_l2:.4} \
         (64 seeds, w=2, purity mpc {:.3}, {:.1}s)",
        summary(Arm::Mpc).purity,
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 7: at w=0 the guided combination is bitwise the conditional
/// prediction, so sampling through the combinator equals sampling that
/// bypasses it, bit for bit, across all three plan shapes; and identical
/// seeds give byte-identical study CSVs across reruns.
#[test]
fn criterion_7_cfg_degeneracies_and_rerun_identity() {
    let start = Instant::now();
    let l = lab();
    let oracle = &l.ring_oracle;
    let sched = &l.sched;

    // The restricted study's three plan shapes, explicit everywhere the
    // gapped plan is not in lookahead mode.
    let eight: Vec<f64> = (1..=8).map(|i| (8 - i) as f64 / 8.0).collect();
    let gap_modes: Vec<GuidanceMode> = (0..8)
        .map(|i| if i % 2 == 0 && i < 5 { GuidanceMode::Mpc } else { GuidanceMode::Explicit })
        .collect();
    let plans = vec![
        StepPlan::from_fracs(&eight, &gap_modes, sched).unwrap(),
        StepPlan::uniform(5, GuidanceMode::Explicit, sched).unwrap(),
        StepPlan::uniform(50, GuidanceMode::Explicit, sched).unwrap(),
    ];

    // mode_eps is shared by both closures; they differ only in whether the
    // w=0 combination runs.
    let mode_eps = |z: &Tensor, t: usize, mode: GuidanceMode, class: usize| -> Tensor {
        let backend = Backend::Analytic { oracle };
        match mode {
            GuidanceMode::Unconditional => oracle.optimal_eps(&z.stop_gradient(), t, None).unwrap(),
            GuidanceMode::Explicit => {
                oracle.optimal_eps(&z.stop_gradient(), t, Some(class)).unwrap()
            }
            GuidanceMode::Mpc => {
                let cfg = GuidanceConfig { w: 0.0, delta: 125.min(t), ..Default::default() };
                run_guide(&backend, GuideKind::MpcConditional, z, t, class, &cfg).unwrap().xi
            }
        }
    };

    for (p_idx, plan) in plans.iter().enumerate() {
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let z0 = Tensor::randn(vec![1, 2], &mut rng);
            let class = (seed % 4) as usize;

            let mut through = |z: &Tensor, t: usize, m: GuidanceMode| {
                let e = mode_eps(z, t, m, class);
                let eu = oracle.optimal_eps(&z.stop_gradient(), t, None).unwrap();
                Ok(cfg_combine(&e, &eu, 0.0))
            };
            let mut bypass =
                |z: &Tensor, t: usize, m: GuidanceMode| Ok(mode_eps(z, t, m, class));

            let a = sample(&z0, plan, &mut through, sched, SampleMethod::Ddim).unwrap();
            let b = sample(&z0, plan, &mut bypass, sched, SampleMethod::Ddim).unwrap();
            for (za, zb) in a.latents.iter().zip(&b.latents) {
                for (va, vb) in za.data().iter().zip(zb.data()) {
                    assert_eq!(
                        va.to_bits(),
                        vb.to_bits(),
                        "w=0 combinator path changed bits (plan {p_idx}, seed {seed})"
                    );
                }
            }
        }
    }

    // Rerun identity: the full trained restricted study and an analytic
    // similarity sweep, rendered twice, must be byte-identical.
    let backend = trained_backend(l);
    let rcfg = RestrictedConfig {
        num_seeds: 16,
        guide_kind: GuideKind::MpcClassifier,
        seed: 0,
        ..Default::default()
    };
    let meta = ReportMeta {
        backend: "trained".into(),
        config_hash: "acceptance".into(),
        t_max: T_MAX,
    };
    let s1 = run_restricted(&backend, &rcfg).unwrap();
    let s2 = run_restricted(&backend, &rcfg).unwrap();
    assert_eq!(restricted_samples_csv(&s1, &meta), restricted_samples_csv(&s2, &meta));
    assert_eq!(restricted_summary_csv(&s1, &meta), restricted_summary_csv(&s2, &meta));
    assert_eq!(restricted_mmd_csv(&s1, &meta), restricted_mmd_csv(&s2, &meta));
    assert_eq!(restricted_divergence_csv(&s1, &meta), restricted_divergence_csv(&s2, &meta));

    let abackend = Backend::Analytic { oracle };
    let scfg = SimilarityConfig {
        t_fracs: vec![0.6, 1.0],
        delta_fracs: vec![0.0, 0.3],
        replicates: 3,
        seed: 0,
        ..Default::default()
    };
    let ameta =
        ReportMeta { backend: "analytic".into(), config_hash: "acceptance".into(), t_max: T_MAX };
    let r1 = run_similarity(&abackend, &scfg).unwrap();
    let r2 = run_similarity(&abackend, &scfg).unwrap();
    assert_eq!(similarity_csv(&r1, &scfg, &ameta), similarity_csv(&r2, &scfg, &ameta));
    assert_eq!(similarity_curves_dat(&r1, &ameta), similarity_curves_dat(&r2, &ameta));

    println!(
        "PASS criterion 7: w=0 sampling bitwise identical with and without the \
         combinator (3 plans x 8 seeds); study CSVs byte-identical across reruns ({:.1}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 8: a perturbed guide at cosine 0.9999 to the true guide drops
/// strictly below that after the w=2 combination with a shared
/// unconditional prediction. The 0.992 figure is illustrative context, not
/// a tolerance.
#[test]
fn criterion_8_guide_amplification() {
    let start = Instant::now();
    let l = lab();
    let gammas = [1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 2.0];
    let demo = amplification_demo(&l.ring_oracle, 600, 1, 0.9999, &gammas, 2.0, 14).unwrap();
    for row in &demo.rows {
        assert!(
            (row.input_cosine - 0.9999).abs() < 1e-12,
            "constructed input cosine off: {}",
            row.input_cosine
        );
        assert!(
            row.output_cosine < row.input_cosine,
            "gamma {}: combined cosine {} not below input {}",
            row.gamma,
            row.output_cosine,
            row.input_cosine
        );
    }
    let headline = demo
        .rows
        .iter()
        .find(|r| (r.gamma - 4.0 / 3.0).abs() < 1e-12)
        .unwrap()
        .output_cosine;
    println!(
        "PASS criterion 8: input cosine 0.9999 -> combined {} at w=2 \
         (achieved {headline:.6} at gamma 4/3; illustrative figure 0.992; {:.1}s)",
        demo.rows
            .iter()
            .map(|r| format!("{:.4}", r.output_cosine))
            .collect::<Vec<_>>()
            .join("/"),
        start.elapsed().as_secs_f64()
    );
}

/// Criterion 9: on the analytic single Gaussian the terminal-sample MMD to
/// direct data draws decreases through step counts {5, 10, 50, 200}, and
/// 8-step PLMS beats 8-step DDIM on median terminal error to a 1000-step
/// reference over 256 seeds.
#[test]
fn criterion_9_sampler_convergence() {
    let start = Instant::now();
    let l = lab();
    let oracle = &l.single_oracle;
    let sched = &l.sched;

    let run_plan = |plan: &StepPlan, z0: &Tensor, method: SampleMethod| -> Vec<f64> {
        let mut eps_fn = |z: &Tensor, t: usize, _m: GuidanceMode| {
            oracle.optimal_eps(&z.stop_gradient(), t, None)
        };
        sample(z0, plan, &mut eps_fn, sched, method).unwrap().terminal().data().to_vec()
    };

    // The 50- and 200-step clouds differ by far less than one direct-draw
    // set's sampling noise, so the statistic is averaged over 8 disjoint
    // 1024-draw sets against 1024 shared-seed terminals.
    let n = 1024usize;
    let direct_sets: Vec<Vec<Vec<f64>>> = (0..8u64)
        .map(|r| {
            MixtureDataset::generate(l.single.clone(), n, 5000 + r)
                .unwrap()
                .samples
                .iter()
                .map(|(x, _)| x.clone())
                .collect()
        })
        .collect();
    let mut means = Vec::new();
    for steps in [5usize, 10, 50, 200] {
        let plan = StepPlan::uniform(steps, GuidanceMode::Unconditional, sched).unwrap();
        let terminals: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(9000 + i as u64);
                let z0 = Tensor::randn(vec![1, 2], &mut rng);
                run_plan(&plan, &z0, SampleMethod::Ddim)
            })
            .collect();
        let total: f64 =
            direct_sets.iter().map(|set| mmd_rbf(&terminals, set, 777).unwrap().mmd2).sum();
        means.push(total / direct_sets.len() as f64);
    }
    for pair in means.windows(2) {
        assert!(pair[1] < pair[0], "MMD did not decrease: {:.6} -> {:.6}", pair[0], pair[1]);
    }

    let plan8 = StepPlan::uniform(8, GuidanceMode::Unconditional, sched).unwrap();
    let plan_ref = StepPlan::uniform(1000, GuidanceMode::Unconditional, sched).unwrap();
    let mut err_ddim = Vec::new();
    let mut err_plms = Vec::new();
    for i in 0..256u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(31000 + i);
        let z0 = Tensor::randn(vec![1, 2], &mut rng);
        let reference = run_plan(&plan_ref, &z0, SampleMethod::Ddim);
        err_ddim.push(l2_distance(&run_plan(&plan8, &z0, SampleMethod::Ddim), &reference));
        err_plms.push(l2_distance(&run_plan(&plan8, &z0, SampleMethod::Plms), &reference));
    }
    let med_ddim = median(&err_ddim);
    let med_plms = median(&err_plms);
    assert!(med_plms < med_ddim, "PLMS median {med_plms:.5} >= DDIM median {med_ddim:.5}");

    println!(
        "PASS criterion 9: MMD means {} strictly decreasing over steps 5/10/50/200; \
         8-step PLMS median {med_plms:.5} < DDIM {med_ddim:.5} vs 1000-step reference ({:.1}s)",
        means.iter().map(|m| format!("{m:+.5}")).collect::<Vec<_>>().join(" -> "),
        start.elapsed().as_secs_f64()
    );
}
