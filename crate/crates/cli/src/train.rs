//! `guidelab train`: draw the dataset, fit the requested models, and
//! persist checkpoints, training-history CSVs, and the run manifest.

use std::path::{Path, PathBuf};

use guidelab_core::experiments::{history_csv, ReportMeta};
use guidelab_core::mixture::MixtureDataset;
use guidelab_core::models::{train_classifier, train_eps};

use crate::checkpoint::{self, Provenance};
use crate::config::{LoadedConfig, TAG_DATA, TAG_TRAIN_CLASSIFIER, TAG_TRAIN_EPS};
use crate::manifest::{ensure_dir, write_artifact, write_manifest, Manifest};
use crate::{CliResult, Failure, TrainTarget};

pub fn run(config_path: &Path, out: Option<PathBuf>, target: TrainTarget) -> CliResult<()> {
    let loaded = LoadedConfig::load(config_path)?;
    let out_dir = loaded.resolve_out(out, "train");
    ensure_dir(&out_dir)?;

    let sched = loaded.schedule()?;
    let params = loaded.mixture()?;
    let data_seed = loaded.derived_seed(TAG_DATA);
    let data = MixtureDataset::generate(params, loaded.cfg.data.n, data_seed)?;

    let mut manifest =
        Manifest::new("train", "trained", &loaded.hash, loaded.cfg.seed, sched.t_max());
    manifest.seed("data", data_seed);
    let meta = ReportMeta {
        backend: "trained".into(),
        config_hash: loaded.hash.clone(),
        t_max: sched.t_max(),
    };

    if matches!(target, TrainTarget::Eps | TrainTarget::Both) {
        let seed = loaded.derived_seed(TAG_TRAIN_EPS);
        manifest.seed("train-eps", seed);
        let tc = loaded.cfg.train.eps.to_core(seed);
        tc.validate().map_err(|e| Failure::usage(format!("train.eps: {e}")))?;
        let trained = train_eps(&data, &sched, &tc)?;
        let (last_step, final_loss) =
            *trained.history.last().expect("training history is never empty");
        let prov = Provenance {
            config_hash: loaded.hash.clone(),
            seed,
            train_steps: tc.steps,
            final_loss,
            null_fraction: trained.null_fraction,
        };
        let ckpt = checkpoint::from_eps(&trained.model, &prov);
        let path =
            write_artifact(&out_dir, &mut manifest, "eps.ckpt.json", &checkpoint::to_bytes(&ckpt))?;
        write_artifact(
            &out_dir,
            &mut manifest,
            "eps_history.csv",
            history_csv(&trained.history, &meta).as_bytes(),
        )?;
        println!("wrote {} (loss {final_loss:.6e} at step {last_step})", path.display());
    }

    if matches!(target, TrainTarget::Classifier | TrainTarget::Both) {
        let seed = loaded.derived_seed(TAG_TRAIN_CLASSIFIER);
        manifest.seed("train-classifier", seed);
        let tc = loaded.cfg.train.classifier.to_core(seed);
        tc.validate().map_err(|e| Failure::usage(format!("train.classifier: {e}")))?;
        let trained = train_classifier(&data, &sched, &tc)?;
        let (last_step, final_loss) =
            *trained.history.last().expect("training history is never empty");
        let prov = Provenance {
            config_hash: loaded.hash.clone(),
            seed,
            train_steps: tc.steps,
            final_loss,
            null_fraction: trained.null_fraction,
        };
        let ckpt = checkpoint::from_classifier(&trained.model, &prov);
        let path = write_artifact(
            &out_dir,
            &mut manifest,
            "classifier.ckpt.json",
            &checkpoint::to_bytes(&ckpt),
        )?;
        write_artifact(
            &out_dir,
            &mut manifest,
            "classifier_history.csv",
            history_csv(&trained.history, &meta).as_bytes(),
        )?;
        println!("wrote {} (loss {final_loss:.6e} at step {last_step})", path.display());
    }

    let mpath = write_manifest(&out_dir, &manifest)?;
    println!("wrote {}", mpath.display());
    Ok(())
}
