//! Model checkpoints: JSON files holding the architecture shape, training
//! provenance, and every parameter tensor in the model's canonical order.
//! serde_json prints f64 in shortest round-trip form, so save followed by
//! load reproduces parameters bit for bit and identical training runs
//! produce byte-identical files.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use guidelab_core::models::{EpsModel, NoisedClassifier};
use guidelab_core::Tensor;

use crate::config::sha256_hex;
use crate::{CliResult, Failure};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// "eps" or "classifier".
    pub kind: String,
    pub dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    /// Zero for classifier checkpoints.
    pub class_embed_dim: usize,
    /// sha256 of the config file the training run consumed.
    pub config_hash: String,
    /// Derived training seed (root seed and purpose tag live in the
    /// manifest next to this file).
    pub seed: u64,
    pub train_steps: usize,
    pub final_loss: f64,
    pub null_fraction: f64,
    /// Model parameters in canonical order.
    pub params: Vec<ParamTensor>,
}

/// Training provenance shared by both checkpoint kinds.
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub train_steps: usize,
    pub final_loss: f64,
    pub null_fraction: f64,
}

fn collect_params(params: &[&Tensor]) -> Vec<ParamTensor> {
    params
        .iter()
        .map(|p| ParamTensor { shape: p.shape().to_vec(), data: p.data().to_vec() })
        .collect()
}

/// Hidden widths are the MLP's interior layers; the rims are input and
/// output widths fixed by the architecture.
fn hidden_of(widths: &[usize]) -> Vec<usize> {
    widths[1..widths.len() - 1].to_vec()
}

pub fn from_eps(model: &EpsModel, prov: &Provenance) -> Checkpoint {
    Checkpoint {
        schema_version: CHECKPOINT_SCHEMA,
        kind: "eps".into(),
        dim: model.dim(),
        num_classes: model.num_classes(),
        hidden: hidden_of(model.mlp.widths()),
        time_embed_dim: model.time_embed_dim(),
        class_embed_dim: model.class_embed_dim(),
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        train_steps: prov.train_steps,
        final_loss: prov.final_loss,
        null_fraction: prov.null_fraction,
        params: collect_params(&model.params()),
    }
}

pub fn from_classifier(model: &NoisedClassifier, prov: &Provenance) -> Checkpoint {
    Checkpoint {
        schema_version: CHECKPOINT_SCHEMA,
        kind: "classifier".into(),
        dim: model.dim(),
        num_classes: model.num_classes(),
        hidden: hidden_of(model.mlp.widths()),
        time_embed_dim: model.time_embed_dim(),
        class_embed_dim: 0,
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        train_steps: prov.train_steps,
        final_loss: prov.final_loss,
        null_fraction: prov.null_fraction,
        params: collect_params(&model.params()),
    }
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(ckpt).expect("checkpoint serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn read(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| {
        Failure::usage(format!("invalid checkpoint {}: {e}", path.display()))
    })?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA {
        return Err(Failure::usage(format!(
            "checkpoint {} has schema {} but this build reads schema {}",
            path.display(),
            ckpt.schema_version,
            CHECKPOINT_SCHEMA
        )));
    }
    Ok(ckpt)
}

/// Rebuilds a model skeleton from the recorded shape and overwrites its
/// parameters with the recorded tensors. The constructor's random draws
/// are discarded, so the fixed skeleton seed carries no entropy.
fn restore_params(
    path: &Path,
    stored: &[ParamTensor],
    live: Vec<&mut Tensor>,
) -> CliResult<()> {
    if stored.len() != live.len() {
        return Err(Failure::usage(format!(
            "checkpoint {}: {} parameter tensors but the architecture has {}",
            path.display(),
            stored.len(),
            live.len()
        )));
    }
    for (slot, saved) in live.into_iter().zip(stored) {
        let want: usize = saved.shape.iter().product();
        if saved.data.len() != want {
            return Err(Failure::usage(format!(
                "checkpoint {}: tensor data length {} does not match shape {:?}",
                path.display(),
                saved.data.len(),
                saved.shape
            )));
        }
        if slot.shape() != saved.shape.as_slice() {
            return Err(Failure::usage(format!(
                "checkpoint {}: tensor shape {:?} does not match architecture shape {:?}",
                path.display(),
                saved.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::from_vec(saved.shape.clone(), saved.data.clone());
    }
    Ok(())
}

pub fn load_eps(path: &Path) -> CliResult<(Checkpoint, EpsModel)> {
    let ckpt = read(path)?;
    if ckpt.kind != "eps" {
        return Err(Failure::usage(format!(
            "checkpoint {} holds a {} model, expected eps",
            path.display(),
            ckpt.kind
        )));
    }
    let mut skeleton_rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = EpsModel::new(
        ckpt.dim,
        ckpt.num_classes,
        &ckpt.hidden,
        ckpt.time_embed_dim,
        ckpt.class_embed_dim,
        &mut skeleton_rng,
    );
    restore_params(path, &ckpt.params, model.params_mut())?;
    Ok((ckpt, model))
}

pub fn load_classifier(path: &Path) -> CliResult<(Checkpoint, NoisedClassifier)> {
    let ckpt = read(path)?;
    if ckpt.kind != "classifier" {
        return Err(Failure::usage(format!(
            "checkpoint {} holds a {} model, expected classifier",
            path.display(),
            ckpt.kind
        )));
    }
    let mut skeleton_rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = NoisedClassifier::new(
        ckpt.dim,
        ckpt.num_classes,
        &ckpt.hidden,
        ckpt.time_embed_dim,
        &mut skeleton_rng,
    );
    restore_params(path, &ckpt.params, model.params_mut())?;
    Ok((ckpt, model))
}

/// Both trained models, loaded and shape-checked against the config
/// mixture. The classifier slot always holds a model because the trained
/// backend requires one structurally; when no checkpoint exists and
/// nothing will evaluate it, a fresh skeleton fills the slot.
pub struct TrainedModels {
    pub eps: EpsModel,
    pub classifier: NoisedClassifier,
}

/// Checkpoint locations from a checkpoint argument: a directory holding
/// the train command's layout, or the eps checkpoint file itself with the
/// classifier as a sibling.
pub fn paths(arg: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    if arg.is_dir() {
        (arg.join("eps.ckpt.json"), arg.join("classifier.ckpt.json"))
    } else {
        let sibling = arg
            .parent()
            .map(|d| d.join("classifier.ckpt.json"))
            .unwrap_or_else(|| std::path::PathBuf::from("classifier.ckpt.json"));
        (arg.to_path_buf(), sibling)
    }
}

/// Loads the trained backend's models, verifying each against the config
/// mixture's shape. `needs_classifier` states whether the requested
/// operation will evaluate the classifier; only then is its checkpoint
/// mandatory.
pub fn load_models(
    arg: &Path,
    dim: usize,
    num_classes: usize,
    needs_classifier: bool,
) -> CliResult<TrainedModels> {
    let (eps_path, clf_path) = paths(arg);
    let (eps_ck, eps) = load_eps(&eps_path)?;
    let check = |path: &Path, ck: &Checkpoint| -> CliResult<()> {
        if ck.dim != dim || ck.num_classes != num_classes {
            return Err(Failure::usage(format!(
                "checkpoint {} was trained for dim {} / {} classes but the config mixture has dim {dim} / {num_classes} classes",
                path.display(),
                ck.dim,
                ck.num_classes
            )));
        }
        Ok(())
    };
    check(&eps_path, &eps_ck)?;

    let classifier = if clf_path.exists() {
        let (clf_ck, clf) = load_classifier(&clf_path)?;
        check(&clf_path, &clf_ck)?;
        clf
    } else if needs_classifier {
        return Err(Failure::usage(format!(
            "guide kind mpc-classifier needs a classifier checkpoint; none at {}",
            clf_path.display()
        )));
    } else {
        // Skeleton standing in for the struct slot; the caller certified
        // nothing will evaluate it.
        NoisedClassifier::new(dim, num_classes, &[4], 4, &mut ChaCha8Rng::seed_from_u64(0))
    };
    Ok(TrainedModels { eps, classifier })
}

/// Prints checkpoint metadata and verifies the stored tensors: shapes
/// consistent with the architecture, every value finite.
pub fn inspect(path: &Path) -> CliResult<()> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let file_hash = sha256_hex(&bytes);
    let ckpt = read(path)?;

    // Loading through the model constructors exercises every shape check.
    match ckpt.kind.as_str() {
        "eps" => {
            load_eps(path)?;
        }
        "classifier" => {
            load_classifier(path)?;
        }
        other => {
            return Err(Failure::usage(format!(
                "checkpoint {} has unknown kind {other:?}",
                path.display()
            )))
        }
    }
    let total: usize = ckpt.params.iter().map(|p| p.data.len()).sum();
    let finite = ckpt.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Failure::usage(format!(
            "checkpoint {} contains non-finite parameters",
            path.display()
        )));
    }

    println!("checkpoint {}", path.display());
    println!("  kind           {}", ckpt.kind);
    println!("  dim            {}", ckpt.dim);
    println!("  num_classes    {}", ckpt.num_classes);
    println!("  hidden         {:?}", ckpt.hidden);
    println!("  time_embed_dim {}", ckpt.time_embed_dim);
    if ckpt.kind == "eps" {
        println!("  class_embed_dim {}", ckpt.class_embed_dim);
    }
    println!("  parameters     {total} values in {} tensors (all finite)", ckpt.params.len());
    println!("  train_steps    {}", ckpt.train_steps);
    println!("  final_loss     {:.6e}", ckpt.final_loss);
    println!("  null_fraction  {:.4}", ckpt.null_fraction);
    println!("  seed           {}", ckpt.seed);
    println!("  config_hash    {}", ckpt.config_hash);
    println!("  file_sha256    {file_hash}");
    Ok(())
}
