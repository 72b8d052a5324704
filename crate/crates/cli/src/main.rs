//! Command-line entry point: data synthesis, ingestion validation,
//! training, evaluation, ablation, modality splitting, and analysis
//! export. One config file per experiment; flags only override config
//! keys. Every command writes all of its outputs, plus a `run.json`
//! provenance record, under `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmis_core::synth::generate_synthetic;

use cmis::config::ExperimentConfig;
use cmis::error::{self, Result};
use cmis::runner::{self, note, ClockKind, TrainOptions};
use cmis::{ablate, analyze, modality, runmeta, synthio};

/// Trains and analyzes cascaded two-scale standardization regressors on
/// facial-landmark motion sequences.
#[derive(Parser)]
#[command(name = "cmis", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Experiment config: TOML or JSON, including a previous run's
    /// run.json. Omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving every output of this run.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the training and generator seeds from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Prints progress notes to stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Verb {
    /// Generates a synthetic corpus: manifest, landmark files, score
    /// sidecars, and the planted ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Loads and checks a manifest and every file it references, without
    /// training anything.
    ValidateData {
        #[command(flatten)]
        common: Common,
    },
    /// Runs the staged training protocol, checkpointing at every stage
    /// boundary.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continues from a stage checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stops after this many protocol stages (1-4).
        #[arg(long)]
        stop_after: Option<usize>,
        /// Exercises every stage once on a generated stub instead of
        /// reading data; writes no checkpoints.
        #[arg(long)]
        dry_run: bool,
        /// Source of the metrics log's wall-clock column.
        #[arg(long, value_enum, default_value_t = ClockKind::Wall)]
        clock: ClockKind,
    },
    /// Evaluates a checkpoint on the validation split of its embedded
    /// config.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate. With --config, the configs must agree
        /// on everything that affects training.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Runs the configured ablation matrices across seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Worker threads; the results table is identical for any value.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tags every sample visual or auditive from its score sidecar.
    SplitModality {
        #[command(flatten)]
        common: Common,
        /// Additionally trains the cross-modality grid (one pipeline per
        /// mode and seed).
        #[arg(long)]
        experiment: bool,
    },
    /// Exports density curves and the centroid-separation report from a
    /// trained checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to analyze.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also renders the figures as SVG under figures/.
        #[arg(long)]
        svg: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.override_seed(common.seed);
    Ok(cfg)
}

fn run_synth(cfg: &ExperimentConfig, out: &Path, verbosity: u8) -> Result<String> {
    let mut recorder = runmeta::RunRecorder::begin("synth", cfg, out)?;
    let dataset = generate_synthetic(&cfg.synth);
    let export = synthio::export(&dataset, &cfg.synth, out)?;
    recorder.output("manifest.csv");
    recorder.output("negatives.csv");
    recorder.output("ground_truth.json");
    note(
        verbosity,
        &format!("landmark files under {}", out.join("landmarks").display()),
    );
    recorder.finish()?;
    Ok(format!(
        "synth: samples={} negatives={} individuals={} scores={} manifest={}",
        export.samples,
        export.negatives,
        cfg.synth.n_individuals,
        if export.with_scores { "yes" } else { "no" },
        export.manifest.display(),
    ))
}

fn run_validate(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let mut recorder = runmeta::RunRecorder::begin("validate-data", cfg, out)?;
    let data = runner::prepare_data(cfg)?;
    let report = serde_json::json!({
        "train_samples": data.train.len(),
        "validation_samples": data.validation.len(),
        "negatives": data.negatives.len(),
        "landmark_columns": data.width,
        "motion_rows": cfg.data.motion_rows(),
    });
    std::fs::write(
        recorder.output("validate.json"),
        serde_json::to_string_pretty(&report).expect("static report serializes"),
    )
    .map_err(|e| error::CliError::runtime(e.to_string()))?;
    recorder.finish()?;
    Ok(format!(
        "validate-data: ok train={} validation={} negatives={} columns={}",
        data.train.len(),
        data.validation.len(),
        data.negatives.len(),
        data.width,
    ))
}

fn dispatch(cli: Cli) -> Result<String> {
    match cli.verb {
        Verb::Synth { common } => {
            let cfg = load_config(&common)?;
            run_synth(&cfg, &common.out, common.verbose)
        }
        Verb::ValidateData { common } => {
            let cfg = load_config(&common)?;
            run_validate(&cfg, &common.out)
        }
        Verb::Train {
            common,
            resume,
            stop_after,
            dry_run,
            clock,
        } => {
            let cfg = load_config(&common)?;
            let opts = TrainOptions {
                dry_run,
                clock,
                stop_after,
                verbosity: common.verbose,
            };
            let report = runner::train(&cfg, &common.out, resume.as_deref(), &opts)?;
            Ok(report.summary())
        }
        Verb::Eval { common, checkpoint } => {
            let supplied = match &common.config {
                Some(path) => {
                    let mut cfg = ExperimentConfig::load(path)?;
                    cfg.override_seed(common.seed);
                    Some(cfg)
                }
                None => None,
            };
            let report = runner::eval(&checkpoint, supplied.as_ref(), &common.out)?;
            Ok(report.summary())
        }
        Verb::Ablate { common, jobs } => {
            let cfg = load_config(&common)?;
            let report = ablate::ablate(&cfg, &common.out, jobs, common.verbose)?;
            Ok(report.summary())
        }
        Verb::SplitModality { common, experiment } => {
            let cfg = load_config(&common)?;
            if experiment {
                let report = modality::experiment(&cfg, &common.out, common.verbose)?;
                Ok(report.summary())
            } else {
                let report = modality::split(&cfg, &common.out)?;
                Ok(report.summary())
            }
        }
        Verb::Analyze {
            common,
            checkpoint,
            svg,
        } => {
            let supplied = match &common.config {
                Some(path) => Some(ExperimentConfig::load(path)?),
                None => None,
            };
            let report = analyze::analyze(&checkpoint, supplied.as_ref(), &common.out, svg)?;
            Ok(report.summary())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
