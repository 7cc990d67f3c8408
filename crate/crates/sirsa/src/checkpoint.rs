//! Versioned JSON checkpoints: network weights, optimizer moments, the
//! temperature, the system-id ensemble, and the RNG state, plus the config
//! hash for pairing checkpoints with their runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::TrainedArtifacts;
use crate::error::SirsaError;
use crate::Result;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub checkpoint_version: u32,
    pub config_hash: String,
    pub artifacts: TrainedArtifacts,
}

impl Checkpoint {
    pub fn new(config_hash: &str, artifacts: TrainedArtifacts) -> Self {
        Self {
            checkpoint_version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            artifacts,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ckpt.checkpoint_version != CHECKPOINT_VERSION {
            return Err(SirsaError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.checkpoint_version
            )));
        }
        Ok(ckpt)
    }
}
