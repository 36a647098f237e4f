//! Command-line front end. One TOML config file describes an experiment
//! (schedule, mixture, training, guidance, study grids); subcommands
//! train models, sample with step plans, and run the two studies.
//!
//! Every run is a pure function of the config file and the flags: all
//! randomness derives from the config's single root seed, reports carry
//! the config hash, and reruns produce byte-identical artifacts.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unreadable or invalid
//! config, malformed plan or checkpoint), 2 runtime failure.

mod checkpoint;
mod config;
mod manifest;
mod plan;
mod sample;
mod study;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use guidelab_core::CoreError;

/// Failure classes mapped onto exit codes. Usage covers everything the
/// user handed us (flags, config, plan, checkpoint files); runtime covers
/// failures past validated inputs (training blowups, guide failures, IO).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Failure {
        Failure::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Failure {
        Failure::Runtime(msg.into())
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "guidelab",
    version,
    about = "Desk-scale lab for conditional diffusion sampling",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Cap on rayon worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the noise model and/or the noised classifier from a config.
    Train {
        /// Experiment config (TOML).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Output directory (default: $GUIDELAB_OUT/train-<confighash8>).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Which models to train.
        #[arg(long, value_enum, default_value_t = TrainTarget::Both)]
        model: TrainTarget,
    },
    /// Sample terminal points (optionally full trajectories) to CSV.
    Sample {
        /// Experiment config (TOML).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Output directory (default: $GUIDELAB_OUT/sample-<confighash8>).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Use the closed-form mixture backend.
        #[arg(long, conflicts_with = "ckpt")]
        analytic: bool,
        /// Checkpoint directory (or eps checkpoint file) for the trained
        /// backend.
        #[arg(long, value_name = "PATH")]
        ckpt: Option<PathBuf>,
        /// Class to condition on; absent samples unconditionally.
        #[arg(long, value_name = "C")]
        class: Option<usize>,
        /// Uniform plan with this many steps (overrides config).
        #[arg(long, value_name = "N", conflicts_with = "plan")]
        steps: Option<usize>,
        /// Step-plan file (TOML) with per-time mode tags.
        #[arg(long, value_name = "FILE")]
        plan: Option<PathBuf>,
        /// Guidance weight (overrides config).
        #[arg(long, value_name = "W")]
        w: Option<f64>,
        /// Number of seeded sampling runs (overrides config).
        #[arg(long, value_name = "K")]
        seeds: Option<usize>,
        /// Sampling method (overrides config).
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Also write every intermediate latent, one row per plan time.
        #[arg(long)]
        trajectories: bool,
    },
    /// Run a seeded study and write its result CSVs plus a manifest.
    Study {
        /// Which study to run.
        #[arg(value_enum)]
        kind: StudyKind,
        #[command(flatten)]
        args: study::StudyArgs,
    },
    /// Print checkpoint metadata and verify its parameter tensors.
    InspectCheckpoint {
        /// Checkpoint file (JSON).
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    /// Guide-similarity grid: cosine to the exact signal over times and
    /// lookahead spans.
    Similarity,
    /// Five-arm restricted-guidance comparison from shared prior draws.
    Restricted,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    Eps,
    Classifier,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ddim,
    Plms,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; they are not
            // usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Train { config, out, model } => train::run(&config, out, model),
        Command::Sample {
            config,
            out,
            analytic,
            ckpt,
            class,
            steps,
            plan,
            w,
            seeds,
            method,
            trajectories,
        } => sample::run(sample::SampleArgs {
            config,
            out,
            analytic,
            ckpt,
            class,
            steps,
            plan,
            w,
            seeds,
            method,
            trajectories,
        }),
        Command::Study { kind, args } => match kind {
            StudyKind::Similarity => study::run_similarity_cmd(args),
            StudyKind::Restricted => study::run_restricted_cmd(args),
        },
        Command::InspectCheckpoint { ckpt } => checkpoint::inspect(&ckpt),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
