//! Exports a generated dataset to the on-disk layout the training engine
//! ingests, so synthetic and licensed data flow through one path.
//!
//! Under the output directory:
//!
//! * `manifest.csv` / `negatives.csv` — sample manifests (negatives are
//!   the annotated no-backchannel clips for the `non_backchannel` neutral
//!   source).
//! * `landmarks/<sample_id>.csv` — headerless frame matrices, rebuilt from
//!   the motion rows by prefix summation so loading re-derives the exact
//!   generated motion.
//! * `scores/<sample_id>.csv` — per-frame speech scores consistent with
//!   each sample's planted modality under the default classification rule.
//!   Written only when the generator planted an auditive cohort.
//! * `ground_truth.json` — the planted per-individual baselines and signal
//!   direction, for verification tooling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cmis_core::data::{integrate_motion, Modality, ModalityRule, Sample, Split};
use cmis_core::synth::{SynthConfig, SynthDataset};

use crate::config::DataConfig;
use crate::error::{io_context, CliError, Result};
use crate::formats::{write_landmarks, write_manifest, write_scores, ManifestRow};

/// What `export` wrote and the data settings that read it back faithfully.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthExport {
    pub manifest: PathBuf,
    pub negatives_manifest: PathBuf,
    pub samples: usize,
    pub negatives: usize,
    pub with_scores: bool,
    /// Window that keeps every exported frame: plug into `data.window_secs`.
    pub window_secs: f64,
    pub fps: u32,
}

/// Ground-truth sidecar of a synthetic export.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub baselines: BTreeMap<String, Vec<f64>>,
    pub signal_direction: Vec<f64>,
    pub generator: SynthConfig,
}

/// Writes the dataset under `out_dir` and returns the reading recipe.
pub fn export(dataset: &SynthDataset, cfg: &SynthConfig, out_dir: &Path) -> Result<SynthExport> {
    let landmarks = out_dir.join("landmarks");
    fs::create_dir_all(&landmarks).map_err(|e| CliError::runtime(io_context(&landmarks, e)))?;
    let with_scores = dataset
        .all_samples()
        .any(|s| s.modality == Modality::Auditive);
    if with_scores {
        let scores = out_dir.join("scores");
        fs::create_dir_all(&scores).map_err(|e| CliError::runtime(io_context(&scores, e)))?;
    }

    let mut rows = Vec::new();
    let mut frames = None;
    for sample in dataset.all_samples() {
        rows.push(export_sample(sample, out_dir, with_scores)?);
        let m = sample.motion.diffs.rows() + 1;
        if *frames.get_or_insert(m) != m {
            return Err(CliError::runtime(format!(
                "sample {}: generated length {} differs from the dataset's",
                sample.motion.sample_id, m
            )));
        }
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;

    let mut negative_rows = Vec::new();
    for sample in &dataset.negatives {
        negative_rows.push(export_sample(sample, out_dir, false)?);
    }
    let negatives_manifest = out_dir.join("negatives.csv");
    write_manifest(&negatives_manifest, &negative_rows)?;

    let truth = GroundTruth {
        baselines: dataset.baselines.clone(),
        signal_direction: dataset.signal_direction.clone(),
        generator: cfg.clone(),
    };
    let truth_path = out_dir.join("ground_truth.json");
    let text = serde_json::to_string_pretty(&truth)
        .map_err(|e| CliError::runtime(format!("{}: {e}", truth_path.display())))?;
    fs::write(&truth_path, text).map_err(|e| CliError::runtime(io_context(&truth_path, e)))?;

    Ok(SynthExport {
        manifest,
        negatives_manifest,
        samples: rows.len(),
        negatives: negative_rows.len(),
        with_scores,
        window_secs: DataConfig::window_secs_for_frames(
            frames.unwrap_or(cfg.motion_len + 1),
            cfg.fps,
        ),
        fps: cfg.fps,
    })
}

fn export_sample(sample: &Sample, out_dir: &Path, with_scores: bool) -> Result<ManifestRow> {
    let id = &sample.motion.sample_id;
    let landmark_rel = format!("landmarks/{id}.csv");
    write_landmarks(
        &out_dir.join(&landmark_rel),
        &integrate_motion(&sample.motion.diffs),
    )?;
    let score_rel = if with_scores {
        let rel = format!("scores/{id}.csv");
        write_scores(
            &out_dir.join(&rel),
            &score_track(sample.modality, sample.motion.diffs.rows() + 1),
        )?;
        Some(rel)
    } else {
        None
    };
    Ok(ManifestRow {
        sample_id: id.clone(),
        individual_id: sample.motion.individual_id.clone(),
        label: sample.label,
        split: sample.split,
        landmark_path: landmark_rel,
        score_path: score_rel,
    })
}

/// A per-frame score stream that the default rule classifies back to the
/// planted modality: auditive samples end in a just-long-enough run of
/// supra-threshold scores, everything else stays silent.
fn score_track(modality: Modality, frames: usize) -> Vec<f64> {
    let rule = ModalityRule::default();
    let mut scores = vec![0.0; frames.max(rule.run_len)];
    if modality == Modality::Auditive {
        let n = scores.len();
        for s in scores[n - rule.run_len..].iter_mut() {
            *s = rule.threshold + 0.15;
        }
    }
    scores
}

/// Convenience for round-trip checks: the manifest split rows.
pub fn split_counts(samples: &[Sample]) -> (usize, usize) {
    let train = samples.iter().filter(|s| s.split == Split::Train).count();
    (train, samples.len() - train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::load_samples;
    use cmis_core::synth::generate_synthetic;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_individuals: 3,
            samples_per_individual: 4,
            negatives_per_individual: 2,
            motion_len: 6,
            width: 5,
            auditive_fraction: 0.5,
            seed: 13,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn exported_files_reload_to_the_exact_generated_motion() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let dataset = generate_synthetic(&cfg);
        let export = export(&dataset, &cfg, dir.path()).unwrap();

        let data_cfg = DataConfig {
            fps: export.fps,
            window_secs: export.window_secs,
            ..DataConfig::default()
        };
        let loaded = load_samples(&export.manifest, &data_cfg, &ModalityRule::default()).unwrap();
        assert_eq!(loaded.samples.len(), 12);
        assert_eq!(loaded.width, 5);

        let mut originals: Vec<&Sample> = dataset.all_samples().collect();
        originals.sort_by(|a, b| a.motion.sample_id.cmp(&b.motion.sample_id));
        for (orig, back) in originals.iter().zip(&loaded.samples) {
            assert_eq!(orig.motion.sample_id, back.motion.sample_id);
            assert_eq!(orig.motion.individual_id, back.motion.individual_id);
            assert_eq!(orig.label, back.label);
            assert_eq!(orig.split, back.split);
            // The file format round-trips f64 exactly; the only error is
            // the prefix-sum/difference cancellation, a few ulps.
            assert_eq!(orig.motion.diffs.shape(), back.motion.diffs.shape());
            for r in 0..orig.motion.diffs.rows() {
                for c in 0..orig.motion.diffs.cols() {
                    let a = orig.motion.diffs.get(r, c);
                    let b = back.motion.diffs.get(r, c);
                    assert!((a - b).abs() < 1e-12, "({r},{c}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn score_sidecars_reproduce_the_planted_modality() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let dataset = generate_synthetic(&cfg);
        assert!(dataset.all_samples().any(|s| s.modality == Modality::Auditive));
        assert!(dataset.all_samples().any(|s| s.modality == Modality::Visual));
        let export = export(&dataset, &cfg, dir.path()).unwrap();
        assert!(export.with_scores);

        let data_cfg = DataConfig {
            fps: export.fps,
            window_secs: export.window_secs,
            ..DataConfig::default()
        };
        let loaded = load_samples(&export.manifest, &data_cfg, &ModalityRule::default()).unwrap();
        let mut originals: Vec<&Sample> = dataset.all_samples().collect();
        originals.sort_by(|a, b| a.motion.sample_id.cmp(&b.motion.sample_id));
        for (orig, back) in originals.iter().zip(&loaded.samples) {
            assert_eq!(orig.modality, back.modality, "{}", orig.motion.sample_id);
        }
    }

    #[test]
    fn visual_only_exports_skip_score_files_and_loads_tag_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            auditive_fraction: 0.0,
            ..small_cfg()
        };
        let dataset = generate_synthetic(&cfg);
        let export = export(&dataset, &cfg, dir.path()).unwrap();
        assert!(!export.with_scores);
        assert!(!dir.path().join("scores").exists());

        let data_cfg = DataConfig {
            fps: export.fps,
            window_secs: export.window_secs,
            ..DataConfig::default()
        };
        let loaded = load_samples(&export.manifest, &data_cfg, &ModalityRule::default()).unwrap();
        assert!(loaded
            .samples
            .iter()
            .all(|s| s.modality == Modality::Unknown));
    }

    #[test]
    fn negatives_and_ground_truth_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let dataset = generate_synthetic(&cfg);
        let export = export(&dataset, &cfg, dir.path()).unwrap();
        assert_eq!(export.negatives, 4);

        let data_cfg = DataConfig {
            fps: export.fps,
            window_secs: export.window_secs,
            ..DataConfig::default()
        };
        let negatives = load_samples(
            &export.negatives_manifest,
            &data_cfg,
            &ModalityRule::default(),
        )
        .unwrap();
        assert_eq!(negatives.samples.len(), 4);

        let truth: GroundTruth = serde_json::from_str(
            &fs::read_to_string(dir.path().join("ground_truth.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(truth.baselines, dataset.baselines);
        assert_eq!(truth.signal_direction, dataset.signal_direction);
        assert_eq!(truth.generator, cfg);
        let (train, val) = split_counts(&dataset.train);
        assert_eq!(val, 0);
        assert!(train > 0);
    }
}
