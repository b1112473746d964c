use std::path::Path;

use serde::{Deserialize, Serialize};
use topic_kg::model::ModelDims;
use topic_kg::training::TrainConfig;

use crate::error::{CliError, Result};
use crate::io;

/// Contents of a `train --config` TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Most recent per-epoch checkpoints kept on disk; the best one is
    /// always kept separately.
    pub keep_checkpoints: usize,
    pub model: ModelDims,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            keep_checkpoints: 3,
            model: ModelDims::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::require_file(path)?;
        let text = String::from_utf8_lossy(&io::read(path)?).into_owned();
        toml::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}
