//! Declarative experiment configuration.
//!
//! One file describes one experiment: data source, model widths, training
//! hyperparameters, augmentation, neutral-sample selection, and the
//! settings of the auxiliary verbs (`synth`, `ablate`, `split-modality`,
//! `analyze`). Command-line flags only override keys that already exist
//! here; there are no positional hyperparameters, so a config file plus a
//! seed fully determines a run.
//!
//! Files may be TOML (the usual authoring format) or JSON. A `run.json`
//! provenance record is accepted anywhere a config is: its embedded
//! snapshot is extracted, which makes every past run re-runnable from its
//! provenance alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cmis_core::ablation::{IdaPlacement, NeutralSource};
use cmis_core::data::{ModalityRule, Split};
use cmis_core::eval::DENSITY_BANDWIDTH;
use cmis_core::ida::IdaConfig;
use cmis_core::model::ModelConfig;
use cmis_core::synth::SynthConfig;
use cmis_core::train::TrainConfig;

use crate::error::{io_context, CliError, Result};

/// Where samples come from and how raw landmark files become motion
/// sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Sample manifest (CSV). Paths inside it are resolved relative to the
    /// manifest's own directory.
    pub manifest: Option<PathBuf>,
    /// Manifest of annotated no-backchannel clips, required by the
    /// `non_backchannel` neutral source.
    pub negatives_manifest: Option<PathBuf>,
    /// Frame rate of the landmark files.
    pub fps: u32,
    /// Length of the trailing window that is kept from every sequence.
    pub window_secs: f64,
    /// Cropping keeps `W = ceil(window_secs * fps)` frames and differences
    /// them into `W - 1` motion rows. Enabling this keeps one extra row:
    /// the difference that crosses the crop boundary, for corpora whose
    /// annotations count `W` motion rows per window.
    pub keep_boundary_diff: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            negatives_manifest: None,
            fps: 25,
            window_secs: 3.0,
            keep_boundary_diff: false,
        }
    }
}

impl DataConfig {
    /// Motion rows per sample after windowing and differencing.
    pub fn motion_rows(&self) -> usize {
        let w = (self.window_secs * self.fps as f64).ceil() as usize;
        if self.keep_boundary_diff {
            w
        } else {
            w - 1
        }
    }

    /// The window, in seconds, that makes the core cropper keep exactly
    /// `frames` frames. Offset by half a frame so float rounding cannot
    /// tip the ceiling to a neighbouring count.
    pub fn window_secs_for_frames(frames: usize, fps: u32) -> f64 {
        (frames as f64 - 0.5) / fps as f64
    }
}

/// Latent-feature augmentation: strengths plus where in the cascade it is
/// applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdaSection {
    pub placement: IdaPlacement,
    pub noise_std: f64,
    pub mask_prob: f64,
    /// Zero whole frames instead of single elements.
    pub frame_masking: bool,
    /// Rescale surviving elements by 1/(1-mask_prob).
    pub rescale: bool,
}

impl Default for IdaSection {
    fn default() -> Self {
        let base = IdaConfig::default();
        IdaSection {
            placement: IdaPlacement::Both,
            noise_std: base.noise_std,
            mask_prob: base.mask_prob,
            frame_masking: base.frame_masking,
            rescale: base.rescale,
        }
    }
}

impl IdaSection {
    pub fn to_core(&self) -> IdaConfig {
        self.placement.configure(&IdaConfig {
            noise_std: self.noise_std,
            mask_prob: self.mask_prob,
            frame_masking: self.frame_masking,
            rescale: self.rescale,
            ..IdaConfig::disabled()
        })
    }
}

/// Which samples count as neutral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeutralConfig {
    pub source: NeutralSource,
    /// Center of the label window (peak source only).
    pub center: f64,
    /// Half-width of the label window (peak source only).
    pub edge: f64,
}

impl Default for NeutralConfig {
    fn default() -> Self {
        NeutralConfig {
            source: NeutralSource::PeakLabels,
            center: 0.25,
            edge: 0.1,
        }
    }
}

/// Spec axes swept by `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// The full module-combination grid crossed with both pooling modes.
    Components,
    /// Augmentation placements.
    Augmentation,
    /// Sequence-translator variants.
    Translator,
    /// Neutral-sample sources.
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub axes: Vec<AblationAxis>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            axes: vec![AblationAxis::Components],
            seeds: vec![0, 1, 2],
        }
    }
}

/// Settings of the `split-modality` verb: the classification rule and the
/// seeds of the optional four-mode training experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalityConfig {
    pub rule: ModalityRule,
    pub seeds: Vec<u64>,
}

impl Default for ModalityConfig {
    fn default() -> Self {
        ModalityConfig {
            rule: ModalityRule::default(),
            seeds: vec![0],
        }
    }
}

/// Settings of the `analyze` verb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Kernel bandwidth of the exported densities.
    pub bandwidth: f64,
    /// Split the analysis runs over.
    pub split: Split,
    /// The two individuals compared by the centroid-separation report.
    /// Defaults to the two with the most samples in the analyzed split.
    pub individuals: Option<[String; 2]>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            bandwidth: DENSITY_BANDWIDTH,
            split: Split::Validation,
            individuals: None,
        }
    }
}

/// A full experiment description. Every section has defaults, so a config
/// file only states what it changes.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ida: IdaSection,
    pub neutral: NeutralConfig,
    pub synth: SynthConfig,
    pub ablation: AblationConfig,
    pub modality: ModalityConfig,
    pub analyze: AnalyzeConfig,
}

impl ExperimentConfig {
    /// Reads a TOML or JSON config. A `run.json` provenance file is
    /// unwrapped to its embedded config snapshot.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(io_context(path, e)))?;
        let is_json = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("json" | "JSON")
        );
        let cfg: ExperimentConfig = if is_json {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            // Provenance records wrap the config under a "config" key.
            let config_value = match value.get("config") {
                Some(inner) if value.get("verb").is_some() => inner.clone(),
                _ => value,
            };
            serde_json::from_value(config_value)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(CliError::config_from)?;
        self.train.validate().map_err(CliError::config_from)?;
        self.ida.to_core().validate().map_err(CliError::config_from)?;
        self.synth.validate().map_err(CliError::config_from)?;
        if self.data.fps == 0 {
            return Err(CliError::config("data.fps must be positive"));
        }
        if !self.data.window_secs.is_finite() || self.data.window_secs <= 0.0 {
            return Err(CliError::config("data.window_secs must be positive"));
        }
        if !self.neutral.edge.is_finite() || self.neutral.edge < 0.0 {
            return Err(CliError::config("neutral.edge must be nonnegative"));
        }
        if !self.neutral.center.is_finite() {
            return Err(CliError::config("neutral.center must be finite"));
        }
        if self.ablation.axes.is_empty() {
            return Err(CliError::config("ablation.axes must not be empty"));
        }
        if self.ablation.seeds.is_empty() {
            return Err(CliError::config("ablation.seeds must not be empty"));
        }
        if self.modality.seeds.is_empty() {
            return Err(CliError::config("modality.seeds must not be empty"));
        }
        if !self.analyze.bandwidth.is_finite() || self.analyze.bandwidth <= 0.0 {
            return Err(CliError::config("analyze.bandwidth must be positive"));
        }
        Ok(())
    }

    /// Applies the `--seed` override: one flag retargets both the training
    /// seed and the generator seed, whichever the verb consumes.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
            self.synth.seed = s;
        }
    }

    /// Fingerprint of everything that shapes a training run: data, model,
    /// optimization, augmentation, and neutral selection. Checkpoints store
    /// it; `eval` and `--resume` refuse configs whose fingerprint differs.
    pub fn training_hash(&self) -> u64 {
        #[derive(Serialize)]
        struct TrainingView<'a> {
            data: &'a DataConfig,
            model: &'a ModelConfig,
            train: &'a TrainConfig,
            ida: &'a IdaSection,
            neutral: &'a NeutralConfig,
        }
        let view = TrainingView {
            data: &self.data,
            model: &self.model,
            train: &self.train,
            ida: &self.ida,
            neutral: &self.neutral,
        };
        let bytes = serde_json::to_vec(&view).expect("config serialization cannot fail");
        // FNV-1a, the same folding the core uses for module hashes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// The fingerprint as it appears in checkpoints and error messages.
    pub fn training_hash_hex(&self) -> String {
        format!("{:016x}", self.training_hash())
    }
}
