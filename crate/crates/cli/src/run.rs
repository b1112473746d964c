//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use topic_kg::checkpoint;
use topic_kg::training::StopReason;
use topic_kg::vocab::hex_digest;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const VOCAB: &str = "vocab.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const PREDICTIONS: &str = "predictions";
pub const REPORTS: &str = "reports";
pub const BEST: &str = "best";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub id: String,
    /// Joint epoch the parameters come from.
    pub epoch: usize,
    pub files: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub data: String,
    pub config: RunConfig,
    pub config_file: Artifact,
    pub vocab_file: Artifact,
    pub vocab_digest: String,
    pub checkpoints: Vec<CheckpointRecord>,
    pub best: Option<String>,
    pub stop_reason: Option<StopReason>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hash_file(root: &Path, rel: &str) -> Result<Artifact> {
    Ok(Artifact {
        path: rel.to_string(),
        sha256: hex_digest(&io::read(&root.join(rel))?),
    })
}

/// Relative path with forward slashes, stable across platforms.
fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Creates the directory layout and writes the config snapshot and the
    /// vocabulary. Refuses to reuse a directory that already holds a run.
    pub fn create(root: &Path, config: &RunConfig, vocab_json: &[u8], vocab_digest: String, data: &Path) -> Result<Self> {
        if root.join(MANIFEST).exists() {
            return Err(CliError::Usage(format!("{} already holds a run", root.display())));
        }
        for sub in [CHECKPOINTS, PREDICTIONS, REPORTS] {
            io::create_dir(&root.join(sub))?;
        }
        io::write(&root.join(CONFIG), config.to_toml().as_bytes())?;
        io::write(&root.join(VOCAB), vocab_json)?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.train.seed,
            data: data.display().to_string(),
            config: config.clone(),
            config_file: hash_file(root, CONFIG)?,
            vocab_file: hash_file(root, VOCAB)?,
            vocab_digest,
            checkpoints: Vec::new(),
            best: None,
            stop_reason: None,
            started_at: now(),
            finished_at: None,
        };
        let run = Self {
            root: root.to_path_buf(),
            manifest,
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn checkpoint_dir(&self, id: &str) -> PathBuf {
        self.root.join(CHECKPOINTS).join(id)
    }

    /// Records a checkpoint already saved under `checkpoints/<id>`,
    /// replacing any earlier record with the same id.
    pub fn record_checkpoint(&mut self, id: &str, epoch: usize) -> Result<()> {
        let files = checkpoint::file_hashes(&self.checkpoint_dir(id))?
            .into_iter()
            .map(|(name, sha256)| Artifact {
                path: rel(&[CHECKPOINTS, id, &name]),
                sha256,
            })
            .collect();
        self.manifest.checkpoints.retain(|c| c.id != id);
        self.manifest.checkpoints.push(CheckpointRecord {
            id: id.to_string(),
            epoch,
            files,
        });
        Ok(())
    }

    /// Deletes all but the newest `keep` per-epoch checkpoints.
    pub fn prune(&mut self, keep: usize) -> Result<()> {
        let mut epochs: Vec<(usize, String)> = self
            .manifest
            .checkpoints
            .iter()
            .filter(|c| c.id != BEST)
            .map(|c| (c.epoch, c.id.clone()))
            .collect();
        epochs.sort();
        let excess = epochs.len().saturating_sub(keep);
        for (_, id) in epochs.into_iter().take(excess) {
            let dir = self.checkpoint_dir(&id);
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            self.manifest.checkpoints.retain(|c| c.id != id);
        }
        Ok(())
    }

    pub fn write_manifest(&self) -> Result<()> {
        io::write_json(&self.root.join(MANIFEST), &self.manifest)
    }
}

impl RunManifest {
    pub fn load(root: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&io::read(&root.join(MANIFEST))?)?)
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        [&self.config_file, &self.vocab_file]
            .into_iter()
            .chain(self.checkpoints.iter().flat_map(|c| &c.files))
    }

    /// Checks that every referenced file exists with the recorded hash.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for a in self.artifacts() {
            let path = root.join(&a.path);
            if !path.is_file() {
                return Err(CliError::MissingInput(path));
            }
            if hex_digest(&io::read(&path)?) != a.sha256 {
                return Err(topic_kg::Error::Format(format!("{} does not match its recorded hash", a.path)).into());
            }
        }
        Ok(())
    }
}

/// The run directory a path sits in, if it is inside `<run>/<sub>/`.
pub fn enclosing_run(path: &Path, sub: &str) -> Option<PathBuf> {
    path.ancestors()
        .skip(1)
        .find(|a| a.file_name().is_some_and(|n| n == sub))
        .and_then(Path::parent)
        .filter(|run| run.join(MANIFEST).is_file())
        .map(Path::to_path_buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enclosing_run_needs_a_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let run = tmp.path().join("r");
        fs::create_dir_all(run.join("checkpoints/best")).unwrap();
        let ckpt = run.join("checkpoints/best");
        assert_eq!(enclosing_run(&ckpt, CHECKPOINTS), None);
        fs::write(run.join(MANIFEST), "{}").unwrap();
        assert_eq!(enclosing_run(&ckpt, CHECKPOINTS), Some(run.clone()));
        assert_eq!(enclosing_run(&run.join("predictions/test.jsonl"), PREDICTIONS), Some(run));
        assert_eq!(enclosing_run(tmp.path(), CHECKPOINTS), None);
    }
}
