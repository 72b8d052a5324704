//! Versioned single-file checkpoints.
//!
//! A checkpoint is a JSON container holding everything a resumed run
//! needs: the full config snapshot and its fingerprint, the model (all
//! parameter blocks keyed by module, plus freeze flags and the completed
//! stage count), the optimizer velocities keyed by parameter path, the
//! resume cursor, and the metrics rows logged so far. Restoring one and
//! continuing reproduces the uninterrupted run's remaining log exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cmis_core::model::ModelState;
use cmis_core::tensor::Tensor;
use cmis_core::train::{Cursor, MetricsRow};

use crate::config::ExperimentConfig;
use crate::error::{io_context, CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Fingerprint of the training-relevant config sections, hex.
    pub config_hash: String,
    /// Full config snapshot; `eval` and `analyze` run from it alone.
    pub config: ExperimentConfig,
    /// Next stage to run and how many of its epochs are already done.
    pub cursor: Cursor,
    pub model: ModelState,
    /// Momentum buffers keyed by parameter path.
    pub velocities: BTreeMap<String, Tensor>,
    /// Metrics emitted before this checkpoint was written.
    pub metrics: Vec<MetricsRow>,
    /// Translator-stage samples skipped so far (no neutral pool).
    pub skipped_samples: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        fs::write(path, text).map_err(|e| CliError::runtime(io_context(path, e)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(io_context(path, e)))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(CliError::config(format!(
                "{}: checkpoint format {} not supported (this build reads {})",
                path.display(),
                ckpt.format_version,
                FORMAT_VERSION
            )));
        }
        if ckpt.config_hash != ckpt.config.training_hash_hex() {
            return Err(CliError::config(format!(
                "{}: stored hash {} does not match the embedded config ({})",
                path.display(),
                ckpt.config_hash,
                ckpt.config.training_hash_hex()
            )));
        }
        Ok(ckpt)
    }

    /// Refuses a config whose training fingerprint differs from the one
    /// this checkpoint was trained under.
    pub fn guard_config(&self, supplied: &ExperimentConfig) -> Result<()> {
        let theirs = supplied.training_hash_hex();
        if theirs != self.config_hash {
            return Err(CliError::config(format!(
                "config hash mismatch: checkpoint was trained under {}, supplied config hashes to {theirs}",
                self.config_hash
            )));
        }
        Ok(())
    }
}
