//! File formats: the sample manifest, per-sample landmark and score files,
//! and the metrics log.
//!
//! * Manifest: CSV with header
//!   `sample_id,individual_id,label,split,landmark_path,score_path`.
//!   The `score_path` column is optional (it may be empty or missing
//!   entirely). Paths are resolved relative to the manifest's directory.
//! * Landmark file: headerless CSV, one row per frame, `H` numeric columns.
//! * Score file: headerless CSV, one per-frame score per line.
//! * Metrics log: CSV `stage,epoch,split,loss,mse,lr,wall_clock_s`.
//!
//! All numeric columns are written in shortest round-trip notation, so a
//! file read back reproduces the original values bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cmis_core::data::{
    classify_modality, window_and_diff, LandmarkSequence, Modality, ModalityRule, Sample, Split,
};
use cmis_core::tensor::Tensor;
use cmis_core::train::MetricsRow;

use crate::config::DataConfig;
use crate::error::{io_context, CliError, Result};

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub individual_id: String,
    pub label: f64,
    pub split: Split,
    pub landmark_path: String,
    #[serde(default)]
    pub score_path: Option<String>,
}

/// Reads a manifest and returns its rows sorted by `sample_id`, the
/// dataset's canonical order.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.deserialize::<ManifestRow>() {
        let row = record.map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        if !(-1.0..=1.0).contains(&row.label) {
            return Err(CliError::runtime(format!(
                "sample {}: label {} outside [-1, 1]",
                row.sample_id, row.label
            )));
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for pair in rows.windows(2) {
        if pair[0].sample_id == pair[1].sample_id {
            return Err(CliError::runtime(format!(
                "sample {}: duplicate sample_id in {}",
                pair[0].sample_id,
                path.display()
            )));
        }
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::runtime(io_context(path, e)))
}

/// Reads a headerless numeric CSV into a matrix; errors name the sample.
pub fn read_landmarks(path: &Path, sample_id: &str) -> Result<Tensor> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("sample {sample_id}: {}", io_context(path, e))))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(width);
        for cell in line.split(',') {
            let value: f64 = cell.trim().parse().map_err(|_| {
                CliError::runtime(format!(
                    "sample {sample_id}: non-numeric cell {:?} at {}:{}",
                    cell.trim(),
                    path.display(),
                    lineno + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::runtime(format!(
                    "sample {sample_id}: non-finite value at {}:{}",
                    path.display(),
                    lineno + 1
                )));
            }
            row.push(value);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(CliError::runtime(format!(
                "sample {sample_id}: row {} has {} columns, expected {}",
                lineno + 1,
                row.len(),
                width
            )));
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(CliError::runtime(format!(
            "sample {sample_id}: needs at least 2 frames, found {}",
            rows.len()
        )));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(Tensor::from_rows(&refs))
}

pub fn write_landmarks(path: &Path, frames: &Tensor) -> Result<()> {
    let mut out = String::new();
    for r in 0..frames.rows() {
        for c in 0..frames.cols() {
            if c > 0 {
                out.push(',');
            }
            push_f64(&mut out, frames.get(r, c));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::runtime(io_context(path, e)))
}

pub fn read_scores(path: &Path, sample_id: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("sample {sample_id}: {}", io_context(path, e))))?;
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        scores.push(line.trim().parse::<f64>().map_err(|_| {
            CliError::runtime(format!(
                "sample {sample_id}: non-numeric score at {}:{}",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    Ok(scores)
}

pub fn write_scores(path: &Path, scores: &[f64]) -> Result<()> {
    let mut out = String::new();
    for &s in scores {
        push_f64(&mut out, s);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::runtime(io_context(path, e)))
}

/// Shortest representation that parses back to the same f64.
fn push_f64(out: &mut String, value: f64) {
    // `{}` on f64 is the shortest round-trip form.
    out.push_str(&format!("{value}"));
}

/// A manifest fully loaded into model-ready samples.
#[derive(Debug)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    /// Landmark columns, constant across the dataset.
    pub width: usize,
}

/// Loads every manifest row: landmark file to windowed motion sequence,
/// score file (when listed) to a modality tag. Order follows the manifest's
/// canonical `sample_id` order.
pub fn load_samples(
    manifest: &Path,
    data_cfg: &DataConfig,
    rule: &ModalityRule,
) -> Result<LoadedDataset> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let frames_kept = data_cfg.motion_rows() + 1;
    let window_secs = DataConfig::window_secs_for_frames(frames_kept, data_cfg.fps);

    let mut samples = Vec::with_capacity(rows.len());
    let mut width: Option<usize> = None;
    for row in &rows {
        let frames = read_landmarks(&base.join(&row.landmark_path), &row.sample_id)?;
        match width {
            None => width = Some(frames.cols()),
            Some(w) if w != frames.cols() => {
                return Err(CliError::runtime(format!(
                    "sample {}: {} landmark columns, dataset uses {}",
                    row.sample_id,
                    frames.cols(),
                    w
                )));
            }
            _ => {}
        }
        let seq = LandmarkSequence {
            frames,
            fps: data_cfg.fps,
            individual_id: row.individual_id.clone(),
            sample_id: row.sample_id.clone(),
        };
        let motion = window_and_diff(&seq, window_secs).map_err(CliError::runtime_from)?;
        let modality = match &row.score_path {
            Some(p) if !p.is_empty() => {
                let scores = read_scores(&base.join(p), &row.sample_id)?;
                classify_modality(&scores, rule)
            }
            _ => Modality::Unknown,
        };
        samples.push(Sample {
            motion,
            label: row.label,
            split: row.split,
            modality,
        });
    }
    Ok(LoadedDataset {
        samples,
        width: width.unwrap_or(0),
    })
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::runtime(io_context(path, e)))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.deserialize::<MetricsRow>() {
        rows.push(record.map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmis_core::train::Stage;
    use std::path::PathBuf;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn manifest_round_trips_and_sorts_by_sample_id() {
        let dir = tmp();
        let path = dir.path().join("manifest.csv");
        let rows = vec![
            ManifestRow {
                sample_id: "s2".into(),
                individual_id: "b".into(),
                label: -0.25,
                split: Split::Validation,
                landmark_path: "landmarks/s2.csv".into(),
                score_path: None,
            },
            ManifestRow {
                sample_id: "s1".into(),
                individual_id: "a".into(),
                label: 0.125,
                split: Split::Train,
                landmark_path: "landmarks/s1.csv".into(),
                score_path: Some("scores/s1.csv".into()),
            },
        ];
        write_manifest(&path, &rows).unwrap();
        let read = read_manifest(&path).unwrap();
        assert_eq!(read.len(), 2);
        assert_eq!(read[0], rows[1]);
        assert_eq!(read[1], rows[0]);
    }

    #[test]
    fn five_column_manifests_without_scores_are_accepted() {
        let dir = tmp();
        let path = dir.path().join("manifest.csv");
        fs::write(
            &path,
            "sample_id,individual_id,label,split,landmark_path\ns1,a,0.5,train,s1.csv\n",
        )
        .unwrap();
        let rows = read_manifest(&path).unwrap();
        assert_eq!(rows[0].score_path, None);
        assert_eq!(rows[0].label, 0.5);
    }

    #[test]
    fn out_of_range_labels_and_duplicates_are_named() {
        let dir = tmp();
        let path = dir.path().join("manifest.csv");
        fs::write(
            &path,
            "sample_id,individual_id,label,split,landmark_path\nbad,a,1.5,train,x.csv\n",
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("bad"), "{err}");

        fs::write(
            &path,
            "sample_id,individual_id,label,split,landmark_path\n\
             s1,a,0.5,train,x.csv\ns1,a,0.4,train,y.csv\n",
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn landmarks_round_trip_bit_exactly() {
        let dir = tmp();
        let path = dir.path().join("lm.csv");
        let mut frames = Tensor::zeros(3, 4);
        let values = [
            0.1, -2.5e-17, 1.0 / 3.0, 7.25, 0.0, -0.0001, 9.99e8, 1e-300, 4.0, 5.5, -6.0, 2.0,
        ];
        for (i, v) in values.iter().enumerate() {
            frames.set(i / 4, i % 4, *v);
        }
        write_landmarks(&path, &frames).unwrap();
        let read = read_landmarks(&path, "s").unwrap();
        assert_eq!(read, frames);
    }

    #[test]
    fn malformed_landmark_files_name_the_sample() {
        let dir = tmp();
        let ragged = dir.path().join("ragged.csv");
        fs::write(&ragged, "1,2\n3\n").unwrap();
        let err = read_landmarks(&ragged, "s7").unwrap_err().to_string();
        assert!(err.contains("s7") && err.contains("columns"), "{err}");

        let text = dir.path().join("text.csv");
        fs::write(&text, "1,x\n2,3\n").unwrap();
        let err = read_landmarks(&text, "s8").unwrap_err().to_string();
        assert!(err.contains("s8") && err.contains("non-numeric"), "{err}");

        let short = dir.path().join("short.csv");
        fs::write(&short, "1,2\n").unwrap();
        let err = read_landmarks(&short, "s9").unwrap_err().to_string();
        assert!(err.contains("s9") && err.contains("2 frames"), "{err}");
    }

    fn write_dataset(dir: &Path) -> PathBuf {
        // Three 4-frame, 2-column sequences; windowing keeps all frames.
        let manifest = dir.join("manifest.csv");
        let mut rows = Vec::new();
        for (i, split) in [(0, "train"), (1, "train"), (2, "validation")] {
            let name = format!("s{i}.csv");
            let base = i as f64;
            fs::write(
                dir.join(&name),
                format!(
                    "{b},0\n{},1\n{},2\n{},3\n",
                    base + 0.5,
                    base + 1.5,
                    base + 3.0,
                    b = base
                ),
            )
            .unwrap();
            rows.push(format!("s{i},ind{},0.{i},{split},{name},", i % 2));
        }
        fs::write(
            &manifest,
            format!(
                "sample_id,individual_id,label,split,landmark_path,score_path\n{}\n",
                rows.join("\n")
            ),
        )
        .unwrap();
        manifest
    }

    #[test]
    fn loading_windows_diffs_and_orders_samples() {
        let dir = tmp();
        let manifest = write_dataset(dir.path());
        let cfg = DataConfig {
            fps: 2,
            window_secs: 1.4, // ceil(2.8) = 3 frames kept, 2 motion rows
            ..DataConfig::default()
        };
        let ds = load_samples(&manifest, &cfg, &ModalityRule::default()).unwrap();
        assert_eq!(ds.width, 2);
        assert_eq!(ds.samples.len(), 3);
        let ids: Vec<&str> = ds
            .samples
            .iter()
            .map(|s| s.motion.sample_id.as_str())
            .collect();
        assert_eq!(ids, ["s0", "s1", "s2"]);
        // Last 3 frames of s0 are rows [0.5,1],[1.5,2],[3,3]; diffs follow.
        let m = &ds.samples[0].motion.diffs;
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(1, 0), 1.5);
        assert_eq!(m.get(1, 1), 1.0);
        assert!(ds
            .samples
            .iter()
            .all(|s| s.modality == Modality::Unknown));
    }

    #[test]
    fn score_files_classify_modality_at_load_time() {
        let dir = tmp();
        let manifest = write_dataset(dir.path());
        // Attach a score file to s0: seven scores above threshold.
        write_scores(&dir.path().join("s0_scores.csv"), &[0.3; 8]).unwrap();
        let text = fs::read_to_string(&manifest)
            .unwrap()
            .replace("s0,ind0,0.0,train,s0.csv,", "s0,ind0,0.0,train,s0.csv,s0_scores.csv");
        fs::write(&manifest, text).unwrap();

        let cfg = DataConfig {
            fps: 2,
            window_secs: 1.4,
            ..DataConfig::default()
        };
        let ds = load_samples(&manifest, &cfg, &ModalityRule::default()).unwrap();
        assert_eq!(ds.samples[0].modality, Modality::Auditive);
        assert_eq!(ds.samples[1].modality, Modality::Unknown);
    }

    #[test]
    fn width_mismatch_across_files_names_the_offender() {
        let dir = tmp();
        let manifest = write_dataset(dir.path());
        fs::write(dir.path().join("s1.csv"), "1,2,3\n4,5,6\n7,8,9\n").unwrap();
        let cfg = DataConfig {
            fps: 2,
            window_secs: 1.4,
            ..DataConfig::default()
        };
        let err = load_samples(&manifest, &cfg, &ModalityRule::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("s1") && err.contains("columns"), "{err}");
    }

    #[test]
    fn empty_manifest_loads_an_empty_dataset() {
        let dir = tmp();
        let manifest = dir.path().join("manifest.csv");
        fs::write(
            &manifest,
            "sample_id,individual_id,label,split,landmark_path,score_path\n",
        )
        .unwrap();
        let ds = load_samples(&manifest, &DataConfig::default(), &ModalityRule::default()).unwrap();
        assert!(ds.samples.is_empty());
        assert_eq!(ds.width, 0);
    }

    #[test]
    fn metrics_log_round_trips_including_missing_mse() {
        let dir = tmp();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow {
                stage: Stage::Neutral,
                epoch: 0,
                split: Split::Train,
                loss: 0.123456789012345,
                mse: None,
                lr: 0.01,
                wall_clock_s: 0.5,
            },
            MetricsRow {
                stage: Stage::Regressor,
                epoch: 3,
                split: Split::Validation,
                loss: 1.0 / 3.0,
                mse: Some(1.0 / 3.0),
                lr: 0.001,
                wall_clock_s: 12.25,
            },
        ];
        write_metrics(&path, &rows).unwrap();
        let read = read_metrics(&path).unwrap();
        assert_eq!(read, rows);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("stage,epoch,split,loss,mse,lr,wall_clock_s"));
    }
}
