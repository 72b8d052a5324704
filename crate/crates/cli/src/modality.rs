//! The `split-modality` verb: tag every sample visual or auditive from its
//! score sidecar, and optionally run the cross-modality train/eval grid.

use std::path::Path;

use serde::Serialize;

use cmis_core::data::{Modality, Sample, Split};
use cmis_core::eval::{evaluate_mse, reference, ModalityMode};
use cmis_core::model::ModelState;
use cmis_core::train::{run_full_protocol, TickClock, TrainConfig, TrainData};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::runmeta::RunRecorder;
use crate::runner::{note, prepare_data, PreparedData};

fn modality_name(m: Modality) -> &'static str {
    match m {
        Modality::Visual => "visual",
        Modality::Auditive => "auditive",
        Modality::Unknown => "unknown",
    }
}

#[derive(Serialize)]
struct TagRow<'a> {
    sample_id: &'a str,
    individual_id: &'a str,
    split: Split,
    modality: &'a str,
}

#[derive(Debug)]
pub struct SplitReport {
    pub total: usize,
    pub visual: usize,
    pub auditive: usize,
    pub unknown: usize,
}

impl SplitReport {
    pub fn summary(&self) -> String {
        format!(
            "split-modality: total={} visual={} auditive={} unknown={}",
            self.total, self.visual, self.auditive, self.unknown
        )
    }
}

/// Writes `modality.csv` with one row per manifest sample. Classification
/// happened at load time from the score sidecars; samples without one stay
/// `unknown`.
pub fn split(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SplitReport> {
    let mut recorder = RunRecorder::begin("split-modality", cfg, out_dir)?;
    let data = prepare_data(cfg)?;
    let all: Vec<&Sample> = data.train.iter().chain(data.validation.iter()).collect();

    let mut writer = csv::Writer::from_path(recorder.output("modality.csv"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let mut report = SplitReport {
        total: all.len(),
        visual: 0,
        auditive: 0,
        unknown: 0,
    };
    for sample in &all {
        match sample.modality {
            Modality::Visual => report.visual += 1,
            Modality::Auditive => report.auditive += 1,
            Modality::Unknown => report.unknown += 1,
        }
        writer
            .serialize(TagRow {
                sample_id: &sample.motion.sample_id,
                individual_id: &sample.motion.individual_id,
                split: sample.split,
                modality: modality_name(sample.modality),
            })
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    recorder.finish()?;
    Ok(report)
}

#[derive(Serialize)]
struct GridRow {
    mode: &'static str,
    seed: u64,
    train_samples: usize,
    validation_samples: usize,
    mse: f64,
}

#[derive(Debug)]
pub struct GridReport {
    pub rows: usize,
    /// `(mode, mean mse over seeds)` in grid order.
    pub means: Vec<(&'static str, f64)>,
}

impl GridReport {
    pub fn summary(&self) -> String {
        let means: Vec<String> = self
            .means
            .iter()
            .map(|(mode, mse)| format!("{mode}={mse}"))
            .collect();
        format!(
            "split-modality experiment: rows={} {} reference: all-to-all={} all-to-visual={}",
            self.rows,
            means.join(" "),
            reference::VALIDATION_MSE,
            reference::ALL_TO_VISUAL_MSE,
        )
    }
}

/// Trains one pipeline per (mode, seed): the mode filters which modalities
/// the training and validation sides keep. Results land in
/// `modality_mse.csv`.
pub fn experiment(cfg: &ExperimentConfig, out_dir: &Path, verbosity: u8) -> Result<GridReport> {
    if cfg.modality.seeds.is_empty() {
        return Err(CliError::config("modality.seeds must not be empty"));
    }
    let mut recorder = RunRecorder::begin("split-modality", cfg, out_dir)?;
    let data = prepare_data(cfg)?;

    let mut rows: Vec<GridRow> = Vec::new();
    for mode in ModalityMode::ALL {
        let train_side: Vec<Sample> = mode
            .filter(&data.train, Split::Train)
            .into_iter()
            .cloned()
            .collect();
        let val_side: Vec<&Sample> = mode.filter(&data.validation, Split::Validation);
        if train_side.is_empty() || val_side.is_empty() {
            return Err(CliError::runtime(format!(
                "mode {} leaves an empty split ({} train, {} validation); \
                 the manifest needs score sidecars covering both modalities",
                mode.name(),
                train_side.len(),
                val_side.len()
            )));
        }
        for &seed in &cfg.modality.seeds {
            let mse = train_and_eval(cfg, &data, &train_side, &val_side, seed)?;
            note(
                verbosity,
                &format!("{} seed {seed}: mse={mse}", mode.name()),
            );
            rows.push(GridRow {
                mode: mode.name(),
                seed,
                train_samples: train_side.len(),
                validation_samples: val_side.len(),
                mse,
            });
        }
    }

    let mut writer = csv::Writer::from_path(recorder.output("modality_mse.csv"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    recorder.finish()?;

    let means = ModalityMode::ALL
        .iter()
        .map(|mode| {
            let of_mode: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode.name())
                .map(|r| r.mse)
                .collect();
            (
                mode.name(),
                of_mode.iter().sum::<f64>() / of_mode.len() as f64,
            )
        })
        .collect();
    Ok(GridReport {
        rows: rows.len(),
        means,
    })
}

/// One cell of the grid: full protocol on the filtered training side, MSE
/// on the filtered validation side.
fn train_and_eval(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    train_side: &[Sample],
    val_side: &[&Sample],
    seed: u64,
) -> Result<f64> {
    let bank = match cfg.neutral.source {
        cmis_core::ablation::NeutralSource::PeakLabels => cmis_core::data::select_neutral_peak(
            train_side,
            cfg.neutral.center,
            cfg.neutral.edge,
        ),
        cmis_core::ablation::NeutralSource::NonBackchannel => {
            cmis_core::data::select_neutral_nonbackchannel(&data.negatives)
        }
    };
    let feed = TrainData {
        train: train_side,
        validation: &[],
        bank: &bank,
    };
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train
    };
    let mut state =
        ModelState::init(cfg.model, seed).map_err(CliError::config_from)?;
    let mut clock = TickClock::default();
    run_full_protocol(&mut state, &feed, &train_cfg, &cfg.ida.to_core(), &mut clock)
        .map_err(CliError::runtime_from)?;
    Ok(evaluate_mse(&state, val_side, train_cfg.batch_size)
        .map_err(CliError::runtime_from)?
        .mse)
}
