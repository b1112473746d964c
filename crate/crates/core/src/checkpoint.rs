//! On-disk checkpoints: a directory holding `manifest.json`, `tensors.bin`
//! (little-endian `f64`, tensors concatenated in manifest order) and
//! `vocab.json`. Nothing time-dependent is stored, so identical runs write
//! identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TopicKgModel};
use crate::params::ParamSet;
use crate::vocab::{hex_digest, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";
pub const VOCAB: &str = "vocab.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub tensors_sha256: String,
    pub vocab_sha256: String,
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save(dir: &Path, model: &TopicKgModel, vocab: &Vocabulary) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut bytes = Vec::with_capacity(8 * model.num_params());
    let mut offset = 0;
    for (name, t) in model.tensors() {
        entries.push(TensorEntry {
            name,
            shape: t.shape(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let vocab_json = serde_json::to_vec_pretty(vocab)?;
    let manifest = CheckpointManifest {
        version: FORMAT_VERSION,
        model: model.config,
        tensors: entries,
        tensors_sha256: hex_digest(&bytes),
        vocab_sha256: hex_digest(&vocab_json),
    };
    write_atomic(&dir.join(TENSORS), &bytes)?;
    write_atomic(&dir.join(VOCAB), &vocab_json)?;
    write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {}", manifest.version)));
    }
    Ok(manifest)
}

/// Loads and hash-verifies a checkpoint.
pub fn load(dir: &Path) -> Result<(TopicKgModel, Vocabulary)> {
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(TENSORS))?;
    if hex_digest(&bytes) != manifest.tensors_sha256 {
        return Err(format_err("tensors.bin does not match its manifest hash"));
    }
    let vocab_json = fs::read(dir.join(VOCAB))?;
    if hex_digest(&vocab_json) != manifest.vocab_sha256 {
        return Err(format_err("vocab.json does not match its manifest hash"));
    }
    let vocab: Vocabulary = serde_json::from_slice(&vocab_json)?;
    if vocab.seq_size() != manifest.model.kg.seq_size {
        return Err(format_err("vocabulary size disagrees with the model"));
    }
    if bytes.len() % 8 != 0 {
        return Err(format_err("tensors.bin length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut model = TopicKgModel::zeros(manifest.model)?;
    let targets = model.tensors_mut();
    if targets.len() != manifest.tensors.len() {
        return Err(format_err("tensor count disagrees with the model"));
    }
    for ((name, t), entry) in targets.into_iter().zip(&manifest.tensors) {
        if name != entry.name || t.shape() != entry.shape {
            return Err(format_err(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        let end = entry.offset + t.len();
        let src = values
            .get(entry.offset..end)
            .ok_or_else(|| format_err(format!("tensor {} out of bounds", entry.name)))?;
        t.data_mut().copy_from_slice(src);
    }
    Ok((model, vocab))
}

/// SHA-256 of each checkpoint file, for run manifests.
pub fn file_hashes(dir: &Path) -> Result<Vec<(String, String)>> {
    [MANIFEST, TENSORS, VOCAB]
        .iter()
        .map(|f| Ok((f.to_string(), hex_digest(&fs::read(dir.join(f))?))))
        .collect()
}

pub fn epoch_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch-{epoch:03}"))
}
