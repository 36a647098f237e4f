//! `guidelab study`: run one of the two seeded studies and write its
//! result CSVs, plot-data files, and manifest into one directory.

use std::path::PathBuf;

use clap::{Args, ValueEnum};

use guidelab_core::experiments::{
    restricted_divergence_csv, restricted_mmd_csv, restricted_samples_csv,
    restricted_summary_csv, run_restricted, run_similarity, similarity_csv,
    similarity_curves_dat, Arm, Backend, GuideKind, ReportMeta,
};

use crate::config::{LoadedConfig, TAG_RESTRICTED, TAG_SIMILARITY};
use crate::manifest::{ensure_dir, write_artifact, write_manifest, Manifest};
use crate::{checkpoint, CliResult, Failure};

#[derive(Args)]
pub struct StudyArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Closed-form mixture or trained checkpoints.
    #[arg(long, value_enum)]
    pub backend: BackendArg,
    /// Checkpoint directory for the trained backend.
    #[arg(long, value_name = "PATH")]
    pub ckpt: Option<PathBuf>,
    /// Output directory (default: $GUIDELAB_OUT/study-<kind>-<confighash8>).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Analytic,
    Trained,
}

impl BackendArg {
    fn name(self) -> &'static str {
        match self {
            BackendArg::Analytic => "analytic",
            BackendArg::Trained => "trained",
        }
    }
}

/// Loads whichever models the backend choice requires and hands a ready
/// backend to the body. `needs_classifier` certifies whether the study
/// will evaluate the trained classifier.
fn with_backend<T>(
    args: &StudyArgs,
    loaded: &LoadedConfig,
    needs_classifier: bool,
    body: impl FnOnce(&Backend) -> CliResult<T>,
) -> CliResult<T> {
    let oracle = loaded.oracle()?;
    match args.backend {
        BackendArg::Analytic => {
            if args.ckpt.is_some() {
                return Err(Failure::usage("--ckpt only applies to --backend trained"));
            }
            body(&Backend::Analytic { oracle: &oracle })
        }
        BackendArg::Trained => {
            let ckpt = args.ckpt.as_ref().ok_or_else(|| {
                Failure::usage("--backend trained needs --ckpt <dir> with checkpoints")
            })?;
            let dim = oracle.params().dim();
            let num_classes = oracle.params().num_classes();
            let models = checkpoint::load_models(ckpt, dim, num_classes, needs_classifier)?;
            body(&Backend::Trained {
                oracle: &oracle,
                eps: &models.eps,
                classifier: &models.classifier,
            })
        }
    }
}

pub fn run_similarity_cmd(args: StudyArgs) -> CliResult<()> {
    let loaded = LoadedConfig::load(&args.config)?;
    let scfg = loaded.similarity_config()?;
    let needs_classifier = scfg.guide_kinds.contains(&GuideKind::MpcClassifier);

    let records = with_backend(&args, &loaded, needs_classifier, |backend| {
        Ok(run_similarity(backend, &scfg)?)
    })?;

    let sched = loaded.schedule()?;
    let out_dir = loaded.resolve_out(args.out, "study-similarity");
    ensure_dir(&out_dir)?;
    let meta = ReportMeta {
        backend: args.backend.name().into(),
        config_hash: loaded.hash.clone(),
        t_max: sched.t_max(),
    };
    let mut manifest = Manifest::new(
        "study similarity",
        args.backend.name(),
        &loaded.hash,
        loaded.cfg.seed,
        sched.t_max(),
    );
    manifest.seed("similarity", loaded.derived_seed(TAG_SIMILARITY));

    let csv = similarity_csv(&records, &scfg, &meta);
    let p1 = write_artifact(&out_dir, &mut manifest, "similarity.csv", csv.as_bytes())?;
    let dat = similarity_curves_dat(&records, &meta);
    let p2 = write_artifact(&out_dir, &mut manifest, "similarity_curves.dat", dat.as_bytes())?;
    let mpath = write_manifest(&out_dir, &manifest)?;

    let failed = records.iter().filter(|r| r.failed).count();
    println!("wrote {} ({} rows, {failed} failed cells)", p1.display(), records.len());
    println!("wrote {}", p2.display());
    println!("wrote {}", mpath.display());
    Ok(())
}

pub fn run_restricted_cmd(args: StudyArgs) -> CliResult<()> {
    let loaded = LoadedConfig::load(&args.config)?;
    let rcfg = loaded.restricted_config()?;
    let needs_classifier = rcfg.guide_kind == GuideKind::MpcClassifier;

    let study = with_backend(&args, &loaded, needs_classifier, |backend| {
        Ok(run_restricted(backend, &rcfg)?)
    })?;

    let sched = loaded.schedule()?;
    let out_dir = loaded.resolve_out(args.out, "study-restricted");
    ensure_dir(&out_dir)?;
    let meta = ReportMeta {
        backend: args.backend.name().into(),
        config_hash: loaded.hash.clone(),
        t_max: sched.t_max(),
    };
    let mut manifest = Manifest::new(
        "study restricted",
        args.backend.name(),
        &loaded.hash,
        loaded.cfg.seed,
        sched.t_max(),
    );
    manifest.seed("restricted", loaded.derived_seed(TAG_RESTRICTED));

    let samples = restricted_samples_csv(&study, &meta);
    let mut written = vec![write_artifact(
        &out_dir,
        &mut manifest,
        "samples.csv",
        samples.as_bytes(),
    )?];
    // One terminal-sample file per arm, carved out of the combined table
    // by the arm column; these are the numeric sample-grid data.
    for arm in Arm::ALL {
        let per_arm = filter_arm_rows(&samples, arm.name());
        written.push(write_artifact(
            &out_dir,
            &mut manifest,
            &format!("samples_{}.csv", arm.name()),
            per_arm.as_bytes(),
        )?);
    }
    written.push(write_artifact(
        &out_dir,
        &mut manifest,
        "summary.csv",
        restricted_summary_csv(&study, &meta).as_bytes(),
    )?);
    written.push(write_artifact(
        &out_dir,
        &mut manifest,
        "mmd.csv",
        restricted_mmd_csv(&study, &meta).as_bytes(),
    )?);
    written.push(write_artifact(
        &out_dir,
        &mut manifest,
        "divergence.csv",
        restricted_divergence_csv(&study, &meta).as_bytes(),
    )?);
    let mpath = write_manifest(&out_dir, &manifest)?;

    for p in &written {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", mpath.display());

    println!("arm              ok  purity  median_l2_ref  mmd2_vs_gold");
    for s in &study.summaries {
        let mmd = study
            .pairwise
            .iter()
            .find(|p| p.arm == s.arm && p.versus == Arm::Gold)
            .map(|p| format!("{:+.6}", p.mmd.mmd2))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<15} {:>3}  {:<6.3} {:>14.4}  {mmd}",
            s.arm.name(),
            s.n_ok,
            s.purity,
            s.median_l2_to_reference,
        );
    }
    Ok(())
}

/// Keeps the header and the data rows whose arm column matches. The three
/// leading columns are integers, so splitting on commas is exact here.
fn filter_arm_rows(samples_csv: &str, arm: &str) -> String {
    let mut out = String::new();
    for (i, line) in samples_csv.lines().enumerate() {
        if i == 0 || line.split(',').nth(3) == Some(arm) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
