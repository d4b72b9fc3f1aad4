use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::short_hash;
use crate::error::{Error, IoContext, Result};

pub const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    #[serde(rename = "skipped (cached)")]
    Cached,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs_hash: String,
    pub outputs_hash: Option<String>,
    pub wall_time_s: f64,
    pub status: StageStatus,
}

/// Ordered record of the stages of one experiment run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path).at(path)?)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").at(path)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn all_cached(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Cached)
    }
}

/// Hash of the files under `paths` (directories walked in sorted order);
/// names are taken relative to `root`.
pub fn hash_paths(root: &Path, paths: &[PathBuf]) -> Result<String> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        let rel = f.strip_prefix(root).unwrap_or(f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(f).at(f)?);
        h.update([0]);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

fn collect_files(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if p.is_file() {
        out.push(p.to_path_buf());
    } else if p.is_dir() {
        for entry in fs::read_dir(p).at(p)? {
            collect_files(&entry.at(p)?.path(), out)?;
        }
    } else {
        return Err(Error::Dataset(format!("expected output {} is missing", p.display())));
    }
    Ok(())
}

/// Short hash of one file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(short_hash(&fs::read(path).at(path)?))
}

/// Runs stages in order, skipping those whose inputs and outputs are
/// unchanged since the previous run recorded in `experiment.json`.
pub struct StageRunner {
    root: PathBuf,
    previous: Option<ExperimentManifest>,
    pub manifest: ExperimentManifest,
}

impl StageRunner {
    pub fn new(root: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(root).at(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            previous: ExperimentManifest::load(&root.join(EXPERIMENT_FILE))?,
            manifest: ExperimentManifest {
                config_hash: config_hash.to_string(),
                stages: Vec::new(),
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Runs (or skips) one stage and returns the hash of its outputs.
    /// `inputs` should cover everything the stage reads, including upstream
    /// output hashes.
    pub fn run(
        &mut self,
        name: &str,
        inputs: &[&str],
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<String> {
        let inputs_hash = short_hash(inputs.join("\n").as_bytes());
        let cached = self
            .previous
            .as_ref()
            .and_then(|m| m.stage(name))
            .filter(|r| reusable(r, &inputs_hash))
            .and_then(|r| r.outputs_hash.clone())
            .filter(|h| hash_paths(&self.root, outputs).ok().as_deref() == Some(h.as_str()));
        if let Some(outputs_hash) = cached {
            log::info!("{name}: skipped (cached)");
            self.manifest.stages.push(StageRecord {
                name: name.to_string(),
                inputs_hash,
                outputs_hash: Some(outputs_hash.clone()),
                wall_time_s: 0.0,
                status: StageStatus::Cached,
            });
            self.save()?;
            return Ok(outputs_hash);
        }
        log::info!("{name}: running");
        let start = Instant::now();
        let result = body().and_then(|()| hash_paths(&self.root, outputs));
        let wall = start.elapsed().as_secs_f64();
        match result {
            Ok(outputs_hash) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    inputs_hash,
                    outputs_hash: Some(outputs_hash.clone()),
                    wall_time_s: wall,
                    status: StageStatus::Completed,
                });
                self.save()?;
                Ok(outputs_hash)
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    inputs_hash,
                    outputs_hash: None,
                    wall_time_s: wall,
                    status: StageStatus::Failed(e.to_string()),
                });
                self.save()?;
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn save(&self) -> Result<()> {
        self.manifest.save(&self.root.join(EXPERIMENT_FILE))
    }
}

fn reusable(r: &StageRecord, inputs_hash: &str) -> bool {
    r.inputs_hash == inputs_hash && matches!(r.status, StageStatus::Completed | StageStatus::Cached)
}
