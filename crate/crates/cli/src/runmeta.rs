//! Per-run provenance: every verb writes a `run.json` under its output
//! directory holding the fully resolved config (seed overrides applied),
//! the source-tree description, and the measured wall time. Feeding a
//! `run.json` back through `--config` re-runs the experiment it records.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io_context, CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub format_version: u32,
    pub verb: String,
    /// Resolved config snapshot; [`ExperimentConfig::load`] unwraps it.
    pub config: ExperimentConfig,
    /// `git describe` of the working tree, or "unknown" outside a repo.
    pub git_describe: String,
    pub wall_time_s: f64,
    /// Files this run wrote, relative to the run.json's directory.
    pub outputs: Vec<String>,
}

/// Collects outputs while a verb runs and writes `run.json` at the end.
pub struct RunRecorder {
    verb: &'static str,
    config: ExperimentConfig,
    out_dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl RunRecorder {
    /// Starts timing. Creates the output directory so verbs can write
    /// immediately.
    pub fn begin(verb: &'static str, config: &ExperimentConfig, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::runtime(io_context(out_dir, e)))?;
        Ok(RunRecorder {
            verb,
            config: config.clone(),
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Resolves a file name inside the output directory and records it.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    /// Writes `run.json` and returns its path.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.outputs.push("run.json".to_string());
        let meta = RunMeta {
            format_version: FORMAT_VERSION,
            verb: self.verb.to_string(),
            config: self.config,
            git_describe: git_describe(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let path = self.out_dir.join("run.json");
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        fs::write(&path, text).map_err(|e| CliError::runtime(io_context(&path, e)))?;
        Ok(path)
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}
