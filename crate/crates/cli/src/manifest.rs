//! Run manifests and artifact writing. A manifest is a deterministic JSON
//! record of what produced a results directory: tool version, command,
//! config hash, the seeds derived from the root, and the sha256 of every
//! file written. No timestamps and no absolute paths, so the manifest is
//! a pure function of the config and flags and its hash changes exactly
//! when they do.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::sha256_hex;
use crate::{CliResult, Failure};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: Tool,
    pub command: String,
    pub backend: String,
    pub config_hash: String,
    pub root_seed: u64,
    /// Purpose name -> seed derived from the root for that purpose.
    pub derived_seeds: BTreeMap<String, u64>,
    pub schedule_steps: usize,
    /// File name -> sha256 of the written bytes, name-sorted.
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

impl Manifest {
    pub fn new(
        command: &str,
        backend: &str,
        config_hash: &str,
        root_seed: u64,
        schedule_steps: usize,
    ) -> Manifest {
        Manifest {
            schema_version: MANIFEST_SCHEMA,
            tool: Tool {
                name: "guidelab".into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
            command: command.into(),
            backend: backend.into(),
            config_hash: config_hash.into(),
            root_seed,
            derived_seeds: BTreeMap::new(),
            schedule_steps,
            files: BTreeMap::new(),
        }
    }

    pub fn seed(&mut self, purpose: &str, seed: u64) {
        self.derived_seeds.insert(purpose.into(), seed);
    }
}

/// Writes one artifact into the output directory and records its hash in
/// the manifest.
pub fn write_artifact(
    dir: &Path,
    manifest: &mut Manifest,
    name: &str,
    bytes: &[u8],
) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    manifest.files.insert(name.into(), sha256_hex(bytes));
    Ok(path)
}

/// Writes the manifest itself; call after every artifact is recorded.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> CliResult<PathBuf> {
    let mut text =
        serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join("manifest.json");
    fs::write(&path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}
