//! The `train` and `eval` verbs: dataset assembly, the staged training
//! loop with per-stage checkpoints, resume, dry runs, and checkpoint
//! evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use cmis_core::data::{
    select_neutral_nonbackchannel, select_neutral_peak, NeutralBank, Sample, Split,
};
use cmis_core::eval::{evaluate_mse, reference};
use cmis_core::model::ModelState;
use cmis_core::optim::Sgd;
use cmis_core::synth::{generate_synthetic, SynthConfig};
use cmis_core::train::{
    run_protocol_until, Clock, Cursor, MetricsRow, ProtocolOutcome, Stage, TickClock, TrainData,
};

use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::formats::{load_samples, write_metrics};
use crate::runmeta::RunRecorder;

/// Real elapsed time, continuing from `base` seconds so resumed logs stay
/// monotone with the rows they extend.
pub struct WallClock {
    base: f64,
    started: Instant,
}

impl WallClock {
    pub fn starting_at(base: f64) -> Self {
        WallClock {
            base,
            started: Instant::now(),
        }
    }
}

impl Clock for WallClock {
    fn elapsed_seconds(&mut self) -> f64 {
        self.base + self.started.elapsed().as_secs_f64()
    }
}

/// Which clock fills the metrics log's `wall_clock_s` column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ClockKind {
    /// Real elapsed seconds (the default).
    Wall,
    /// A deterministic counter, for byte-identical logs across runs.
    Tick,
}

fn make_clock(kind: ClockKind, rows_so_far: usize, base_seconds: f64) -> Box<dyn Clock> {
    match kind {
        ClockKind::Wall => Box::new(WallClock::starting_at(base_seconds)),
        ClockKind::Tick => Box::new(TickClock::starting_at(rows_so_far as u64, 1.0)),
    }
}

/// Samples and negatives, loaded and split.
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub negatives: Vec<Sample>,
    /// Landmark columns found on disk.
    pub width: usize,
}

impl PreparedData {
    pub fn bank(&self, cfg: &ExperimentConfig) -> NeutralBank {
        match cfg.neutral.source {
            cmis_core::ablation::NeutralSource::PeakLabels => {
                select_neutral_peak(&self.train, cfg.neutral.center, cfg.neutral.edge)
            }
            cmis_core::ablation::NeutralSource::NonBackchannel => {
                select_neutral_nonbackchannel(&self.negatives)
            }
        }
    }

    pub fn train_data<'a>(&'a self, bank: &'a NeutralBank) -> TrainData<'a> {
        TrainData {
            train: &self.train,
            validation: &self.validation,
            bank,
        }
    }
}

/// Loads the manifest (and the negatives manifest, when configured) and
/// checks the landmark width against the model. Relative paths resolve
/// against the working directory.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::config("data.manifest is required by this command"))?;
    let loaded = load_samples(manifest, &cfg.data, &cfg.modality.rule)?;
    let negatives = match &cfg.data.negatives_manifest {
        Some(path) => load_samples(path, &cfg.data, &cfg.modality.rule)?.samples,
        None => Vec::new(),
    };
    if cfg.neutral.source == cmis_core::ablation::NeutralSource::NonBackchannel
        && negatives.is_empty()
    {
        return Err(CliError::config(
            "neutral.source = non_backchannel needs data.negatives_manifest with samples",
        ));
    }
    if !loaded.samples.is_empty() && loaded.width != cfg.model.motion_width {
        return Err(CliError::config(format!(
            "model.motion_width is {} but the landmark files have {} columns",
            cfg.model.motion_width, loaded.width
        )));
    }
    let (train, validation): (Vec<Sample>, Vec<Sample>) = loaded
        .samples
        .into_iter()
        .partition(|s| s.split == Split::Train);
    Ok(PreparedData {
        train,
        validation,
        negatives,
        width: loaded.width,
    })
}

#[derive(Clone, Copy)]
pub struct TrainOptions {
    pub dry_run: bool,
    pub clock: ClockKind,
    /// Stop after this many stages (1..=4); `None` runs the whole protocol.
    pub stop_after: Option<usize>,
    pub verbosity: u8,
}

#[derive(Debug)]
pub struct TrainReport {
    pub metrics_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
    pub completed_stages: usize,
    pub skipped_samples: usize,
    pub final_validation_mse: Option<f64>,
    pub dry_run: bool,
}

impl TrainReport {
    /// The one-line summary `train` prints on success.
    pub fn summary(&self) -> String {
        let mse = match self.final_validation_mse {
            Some(v) => format!("{v}"),
            None => "n/a".to_string(),
        };
        format!(
            "train{}: stages_completed={} skipped_samples={} validation_mse={mse} reference_full_scale={}",
            if self.dry_run { " (dry run)" } else { "" },
            self.completed_stages,
            self.skipped_samples,
            reference::VALIDATION_MSE,
        )
    }
}

/// Runs (or resumes) the four-stage protocol, checkpointing at every stage
/// boundary, and writes `metrics.csv`, `final.ckpt`, and `run.json`.
pub fn train(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if opts.dry_run {
        return dry_run(cfg, out_dir, opts);
    }
    let stop_after = match opts.stop_after {
        Some(n) if !(1..=Stage::ALL.len()).contains(&n) => {
            return Err(CliError::usage(format!(
                "--stop-after must be between 1 and {}, got {n}",
                Stage::ALL.len()
            )));
        }
        Some(n) => n,
        None => Stage::ALL.len(),
    };

    let mut recorder = RunRecorder::begin("train", cfg, out_dir)?;
    let data = prepare_data(cfg)?;
    let bank = data.bank(cfg);
    let feed = data.train_data(&bank);

    // Fresh start or a checkpoint restore.
    let (mut state, mut sgd, mut cursor, mut metrics, mut skipped) = match resume {
        None => (
            ModelState::init(cfg.model, cfg.train.seed).map_err(CliError::config_from)?,
            Sgd::new(cfg.train.sgd_config()),
            Cursor::START,
            Vec::new(),
            0usize,
        ),
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.guard_config(cfg)?;
            let mut sgd = Sgd::new(cfg.train.sgd_config());
            sgd.restore_velocities(ckpt.velocities);
            note(
                opts.verbosity,
                &format!(
                    "resuming at stage {} (+{} epochs), {} rows restored",
                    ckpt.cursor.stage,
                    ckpt.cursor.epochs_done,
                    ckpt.metrics.len()
                ),
            );
            (
                ckpt.model,
                sgd,
                ckpt.cursor,
                ckpt.metrics,
                ckpt.skipped_samples,
            )
        }
    };

    let base_seconds = metrics.last().map(|r: &MetricsRow| r.wall_clock_s).unwrap_or(0.0);
    let mut clock = make_clock(opts.clock, metrics.len(), base_seconds);
    let ida = cfg.ida.to_core();

    for k in cursor.stage..stop_after {
        let span = run_protocol_until(
            &mut state,
            &mut sgd,
            &feed,
            &cfg.train,
            &ida,
            clock.as_mut(),
            cursor,
            k + 1,
        )
        .map_err(CliError::runtime_from)?;
        metrics.extend(span.metrics);
        skipped += span.skipped_samples;
        cursor = Cursor {
            stage: k + 1,
            epochs_done: 0,
        };
        let ckpt = Checkpoint {
            format_version: FORMAT_VERSION,
            config_hash: cfg.training_hash_hex(),
            config: cfg.clone(),
            cursor,
            model: state.clone(),
            velocities: sgd.velocities().clone(),
            metrics: metrics.clone(),
            skipped_samples: skipped,
        };
        let name = format!("stage{}_{}.ckpt", k + 1, Stage::ALL[k].name());
        ckpt.save(&recorder.output(&name))?;
        note(
            opts.verbosity,
            &format!("stage {} ({}) done", k + 1, Stage::ALL[k].name()),
        );
        if k + 1 == Stage::ALL.len() {
            ckpt.save(&recorder.output("final.ckpt"))?;
        }
    }

    write_metrics(&recorder.output("metrics.csv"), &metrics)?;
    let final_validation_mse = if state.completed_stages == Stage::ALL.len()
        && !data.validation.is_empty()
    {
        let refs: Vec<&Sample> = data.validation.iter().collect();
        Some(
            evaluate_mse(&state, &refs, cfg.train.batch_size)
                .map_err(CliError::runtime_from)?
                .mse,
        )
    } else {
        None
    };
    let checkpoint_path = if state.completed_stages == Stage::ALL.len() {
        Some(out_dir.join("final.ckpt"))
    } else {
        Some(out_dir.join(format!(
            "stage{}_{}.ckpt",
            cursor.stage,
            Stage::ALL[cursor.stage - 1].name()
        )))
    };
    recorder.finish()?;
    Ok(TrainReport {
        metrics_path: out_dir.join("metrics.csv"),
        checkpoint_path,
        completed_stages: state.completed_stages,
        skipped_samples: skipped,
        final_validation_mse,
        dry_run: false,
    })
}

/// Validates shapes and stage wiring under the configured widths and
/// hyperparameters: a 10-sample generated stub flows through every stage
/// once. No data files are read and no checkpoints are written. The stub
/// widens the neutral label window so each stub individual has a pool —
/// the dry run exercises wiring, not selection quality.
fn dry_run(cfg: &ExperimentConfig, out_dir: &Path, opts: &TrainOptions) -> Result<TrainReport> {
    let mut recorder = RunRecorder::begin("train", cfg, out_dir)?;
    let stub_cfg = SynthConfig {
        n_individuals: 2,
        samples_per_individual: 5,
        negatives_per_individual: 4,
        motion_len: cfg.data.motion_rows(),
        width: cfg.model.motion_width,
        fps: cfg.data.fps,
        seed: cfg.train.seed,
        ..SynthConfig::default()
    };
    let stub = generate_synthetic(&stub_cfg);
    let bank = match cfg.neutral.source {
        cmis_core::ablation::NeutralSource::PeakLabels => {
            select_neutral_peak(&stub.train, cfg.neutral.center, cfg.neutral.edge.max(2.0))
        }
        cmis_core::ablation::NeutralSource::NonBackchannel => {
            select_neutral_nonbackchannel(&stub.negatives)
        }
    };
    let feed = TrainData {
        train: &stub.train,
        validation: &stub.validation,
        bank: &bank,
    };

    let mut one_epoch_each = cfg.train;
    one_epoch_each.stage_epochs = [1, 1, 1, 1];
    let mut state =
        ModelState::init(cfg.model, cfg.train.seed).map_err(CliError::config_from)?;
    let mut sgd = Sgd::new(one_epoch_each.sgd_config());
    let mut clock = make_clock(opts.clock, 0, 0.0);
    let out = run_protocol_until(
        &mut state,
        &mut sgd,
        &feed,
        &one_epoch_each,
        &cfg.ida.to_core(),
        clock.as_mut(),
        Cursor::START,
        Stage::ALL.len(),
    )
    .map_err(CliError::runtime_from)?;

    write_metrics(&recorder.output("metrics.csv"), &out.metrics)?;
    note(
        opts.verbosity,
        &format!(
            "dry run: {} params, motion {}x{}, {} metric rows",
            state.visit_params().len(),
            cfg.data.motion_rows(),
            cfg.model.motion_width,
            out.metrics.len()
        ),
    );
    recorder.finish()?;
    Ok(TrainReport {
        metrics_path: out_dir.join("metrics.csv"),
        checkpoint_path: None,
        completed_stages: state.completed_stages,
        skipped_samples: out.skipped_samples,
        final_validation_mse: None,
        dry_run: true,
    })
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub validation_mse: f64,
    pub samples: usize,
    pub completed_stages: usize,
    /// Full-scale benchmark figure shown for orientation.
    pub reference_full_scale_mse: f64,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "eval: validation_mse={} samples={} completed_stages={} reference_full_scale={}",
            self.validation_mse, self.samples, self.completed_stages, self.reference_full_scale_mse
        )
    }
}

/// Evaluates a checkpoint on the validation split of its embedded config,
/// writing `predictions.csv` and `eval.json`.
pub fn eval(
    checkpoint: &Path,
    supplied_config: Option<&ExperimentConfig>,
    out_dir: &Path,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(supplied) = supplied_config {
        ckpt.guard_config(supplied)?;
    }
    let cfg = &ckpt.config;
    let mut recorder = RunRecorder::begin("eval", cfg, out_dir)?;
    let data = prepare_data(cfg)?;
    if data.validation.is_empty() {
        return Err(CliError::runtime("validation split is empty"));
    }
    let refs: Vec<&Sample> = data.validation.iter().collect();
    let outcome = evaluate_mse(&ckpt.model, &refs, cfg.train.batch_size)
        .map_err(CliError::runtime_from)?;

    let mut writer = csv::Writer::from_path(recorder.output("predictions.csv"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    #[derive(Serialize)]
    struct PredictionRow<'a> {
        sample_id: &'a str,
        label: f64,
        prediction: f64,
    }
    for (sample, &prediction) in refs.iter().zip(&outcome.predictions) {
        writer
            .serialize(PredictionRow {
                sample_id: &sample.motion.sample_id,
                label: sample.label,
                prediction,
            })
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    let report = EvalReport {
        validation_mse: outcome.mse,
        samples: refs.len(),
        completed_stages: ckpt.model.completed_stages,
        reference_full_scale_mse: reference::VALIDATION_MSE,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(recorder.output("eval.json"), json)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    recorder.finish()?;
    Ok(report)
}

/// Stage/verbosity chatter goes to stderr; stdout is for results.
pub fn note(verbosity: u8, msg: &str) {
    if verbosity > 0 {
        eprintln!("cmis: {msg}");
    }
}

/// Reproducibility helper shared by tests and `analyze`: the training
/// outcome of a config on already-prepared data, with a deterministic
/// clock. Used where logs must be comparable across hosts.
pub fn protocol_outcome_for_tests(
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(ModelState, ProtocolOutcome)> {
    let bank = data.bank(cfg);
    let feed = data.train_data(&bank);
    let mut state =
        ModelState::init(cfg.model, cfg.train.seed).map_err(CliError::config_from)?;
    let mut sgd = Sgd::new(cfg.train.sgd_config());
    let mut clock = TickClock::default();
    let out = run_protocol_until(
        &mut state,
        &mut sgd,
        &feed,
        &cfg.train,
        &cfg.ida.to_core(),
        &mut clock,
        Cursor::START,
        Stage::ALL.len(),
    )
    .map_err(CliError::runtime_from)?;
    Ok((state, out))
}
