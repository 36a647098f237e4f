//! `guidelab sample`: run seeded sampling through a step plan on either
//! backend and write the terminal points (or full trajectories) as CSV.
//! Rows are ordered by seed index and every draw derives from the config
//! root seed, so reruns write byte-identical files.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use guidelab_core::experiments::{gap_spans, guided_eps, Backend, GuideKind};
use guidelab_core::sampler::{sample, GuidanceMode, StepPlan, Trajectory};
use guidelab_core::seeding::derive_seed;
use guidelab_core::Tensor;

use crate::config::{LoadedConfig, TAG_SAMPLE};
use crate::manifest::ensure_dir;
use crate::plan;
use crate::{checkpoint, CliResult, Failure, MethodArg};

pub struct SampleArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub analytic: bool,
    pub ckpt: Option<PathBuf>,
    pub class: Option<usize>,
    pub steps: Option<usize>,
    pub plan: Option<PathBuf>,
    pub w: Option<f64>,
    pub seeds: Option<usize>,
    pub method: Option<MethodArg>,
    pub trajectories: bool,
}

pub fn run(args: SampleArgs) -> CliResult<()> {
    let loaded = LoadedConfig::load(&args.config)?;
    if !args.analytic && args.ckpt.is_none() {
        return Err(Failure::usage("sample needs --analytic or --ckpt <path>"));
    }

    let sched = loaded.schedule()?;
    let oracle = loaded.oracle()?;
    let dim = oracle.params().dim();
    let num_classes = oracle.params().num_classes();
    let method = loaded.sample_method(args.method)?;
    let kind = loaded.guide_kind()?;
    let mut gcfg = loaded.guidance()?;
    if let Some(w) = args.w.or(loaded.cfg.sample.w) {
        gcfg.w = w;
    }

    let class = args.class.or(loaded.cfg.sample.class);
    if let Some(c) = class {
        if c >= num_classes {
            return Err(Failure::usage(format!(
                "--class {c} out of range: the mixture has {num_classes} classes"
            )));
        }
    }

    let num_seeds = args.seeds.unwrap_or(loaded.cfg.sample.seeds);
    if num_seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }

    let default_mode = if class.is_some() {
        GuidanceMode::Explicit
    } else {
        GuidanceMode::Unconditional
    };
    let plan = match &args.plan {
        Some(path) => plan::load(path, &sched)?,
        None => {
            let n = args.steps.unwrap_or(loaded.cfg.sample.steps);
            StepPlan::uniform(n, default_mode, &sched)
                .map_err(|e| Failure::usage(e.to_string()))?
        }
    };

    let guided_steps =
        plan.modes().iter().any(|m| !matches!(m, GuidanceMode::Unconditional));
    if guided_steps && class.is_none() {
        return Err(Failure::usage(
            "plan has guided steps; give --class (or sample.class in the config)",
        ));
    }
    // Only read when the plan has guided steps, which the check above
    // ties to a present class.
    let class_val = class.unwrap_or(0);

    let needs_classifier = !plan.times_with_mode(GuidanceMode::Mpc).is_empty()
        && kind == GuideKind::MpcClassifier;

    let models = if args.analytic {
        None
    } else {
        Some(checkpoint::load_models(
            args.ckpt.as_ref().unwrap(),
            dim,
            num_classes,
            needs_classifier,
        )?)
    };
    let backend = match &models {
        None => Backend::Analytic { oracle: &oracle },
        Some(m) => Backend::Trained { oracle: &oracle, eps: &m.eps, classifier: &m.classifier },
    };

    let spans = gap_spans(&plan);
    let sample_root = loaded.derived_seed(TAG_SAMPLE);

    let runs: Vec<(u64, Trajectory)> = (0..num_seeds)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(sample_root, &[i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z0 = Tensor::randn(vec![1, dim], &mut rng);
            let mut eps_fn = |z: &Tensor, t: usize, mode: GuidanceMode| {
                let mut g = gcfg.clone();
                if mode == GuidanceMode::Mpc {
                    g.delta = spans[&t];
                }
                guided_eps(&backend, z, t, mode, class_val, kind, &g)
            };
            sample(&z0, &plan, &mut eps_fn, &sched, method)
                .map(|traj| (seed, traj))
                .map_err(|e| Failure::runtime(format!("seed index {i}: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let out_dir = loaded.resolve_out(args.out, "sample");
    ensure_dir(&out_dir)?;
    let csv =
        render_csv(&loaded, &runs, class, method.name(), gcfg.w, args.trajectories, args.analytic);
    let rows = csv.lines().count() - 1;
    let path = out_dir.join("samples.csv");
    std::fs::write(&path, &csv)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {} ({rows} rows)", path.display());
    Ok(())
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

#[allow(clippy::too_many_arguments)]
fn render_csv(
    loaded: &LoadedConfig,
    runs: &[(u64, Trajectory)],
    class: Option<usize>,
    method: &str,
    w: f64,
    trajectories: bool,
    analytic: bool,
) -> String {
    let dim = runs
        .first()
        .map(|(_, traj)| traj.terminal().data().len())
        .unwrap_or(0);
    let backend = if analytic { "analytic" } else { "trained" };
    let class_field = class.map(|c| c.to_string()).unwrap_or_default();

    let mut out = String::from("seed_index,seed,class,step_index,time,");
    for d in 0..dim {
        let _ = write!(out, "x{d},");
    }
    out.push_str("w,method,backend,config_hash\n");

    for (i, (seed, traj)) in runs.iter().enumerate() {
        // latents[k] is the state at times[k]; the extra final latent is
        // the clean reconstruction after the last evaluation at step 0.
        let emit: Box<dyn Iterator<Item = usize>> = if trajectories {
            Box::new(0..traj.latents.len())
        } else {
            Box::new(std::iter::once(traj.latents.len() - 1))
        };
        for k in emit {
            let time = if k < traj.times.len() { traj.times[k] } else { 0 };
            let _ = write!(out, "{i},{seed},{class_field},{k},{time},");
            for v in traj.latents[k].data() {
                let _ = write!(out, "{},", fmt(*v));
            }
            let _ = writeln!(
                out,
                "{},{method},{backend},{}",
                fmt(w),
                loaded.hash
            );
        }
    }
    out
}
