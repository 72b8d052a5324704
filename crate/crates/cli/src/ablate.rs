//! The `ablate` verb: runs the configured experiment matrices across
//! seeds, optionally on several worker threads, and writes the results
//! table plus a per-spec mean summary.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use cmis_core::ablation::{
    augmentation_matrix, component_matrix, mean_mse_by_label, neutral_matrix, run_spec,
    translator_matrix, AblationData, AblationRow, AblationSpec,
};
use cmis_core::model::PoolingKind;
use cmis_core::translator::TranslatorVariant;

use crate::config::{AblationAxis, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::runmeta::RunRecorder;
use crate::runner::{note, prepare_data};

/// Collects the specs of every configured axis, in axis order, dropping
/// duplicates (the full default pipeline appears in several matrices).
pub fn collect_specs(axes: &[AblationAxis]) -> Vec<AblationSpec> {
    let mut specs: Vec<AblationSpec> = Vec::new();
    for axis in axes {
        let batch = match axis {
            AblationAxis::Components => component_matrix(),
            AblationAxis::Augmentation => augmentation_matrix(),
            AblationAxis::Translator => translator_matrix(),
            AblationAxis::Neutral => neutral_matrix(),
        };
        for spec in batch {
            if !specs.iter().any(|s| s.label() == spec.label()) {
                specs.push(spec);
            }
        }
    }
    specs
}

/// One `ablation.csv` row: the spec spelled out column by column so the
/// table filters cleanly without parsing composite labels.
#[derive(Serialize)]
struct CsvRow<'a> {
    components: String,
    pooling: &'a str,
    ida: &'a str,
    translator: &'a str,
    neutral: &'a str,
    seed: u64,
    mse: f64,
    skipped_samples: usize,
}

fn csv_row<'a>(spec: &AblationSpec, row: &AblationRow) -> CsvRow<'a> {
    CsvRow {
        components: spec.components.label(),
        pooling: match spec.pooling {
            PoolingKind::Global => "global",
            PoolingKind::Tap => "tap",
        },
        ida: spec.ida.name(),
        translator: match spec.translator {
            TranslatorVariant::EdLstm => "ed_lstm",
            TranslatorVariant::EdGru => "ed_gru",
            TranslatorVariant::Attention => "attention",
        },
        neutral: spec.neutral.name(),
        seed: row.seed,
        mse: row.mse,
        skipped_samples: row.skipped_samples,
    }
}

#[derive(Serialize)]
struct SummaryRow {
    label: String,
    mean_mse: f64,
    seeds: usize,
}

#[derive(Debug)]
pub struct AblateReport {
    pub runs: usize,
    pub specs: usize,
    pub seeds: usize,
    pub best_label: String,
    pub best_mean_mse: f64,
}

impl AblateReport {
    pub fn summary(&self) -> String {
        format!(
            "ablate: runs={} specs={} seeds={} best=\"{}\" mean_mse={}",
            self.runs, self.specs, self.seeds, self.best_label, self.best_mean_mse
        )
    }
}

/// Runs every spec of the configured axes under every configured seed and
/// writes `ablation.csv` (one row per run) and `summary.csv` (mean per
/// spec). Each run is independently seeded, so the table is identical for
/// any `jobs` value.
pub fn ablate(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
    verbosity: u8,
) -> Result<AblateReport> {
    let jobs = jobs.max(1);
    let specs = collect_specs(&cfg.ablation.axes);
    let seeds = &cfg.ablation.seeds;
    if specs.is_empty() || seeds.is_empty() {
        return Err(CliError::config(
            "ablation needs at least one axis and one seed",
        ));
    }

    let mut recorder = RunRecorder::begin("ablate", cfg, out_dir)?;
    let data = prepare_data(cfg)?;
    let shared = AblationData {
        train: &data.train,
        validation: &data.validation,
        negatives: &data.negatives,
        peak_center: cfg.neutral.center,
        peak_edge: cfg.neutral.edge,
    };

    // Work queue: spec-major, seed-minor, claimed by index so the output
    // order never depends on thread scheduling.
    let items: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|si| seeds.iter().map(move |&seed| (si, seed)))
        .collect();
    note(
        verbosity,
        &format!(
            "{} specs x {} seeds = {} runs on {} thread(s)",
            specs.len(),
            seeds.len(),
            items.len(),
            jobs.min(items.len())
        ),
    );
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<cmis_core::error::Result<AblationRow>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    let base_ida = cfg.ida.to_core();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let (si, seed) = items[i];
                let row = run_spec(
                    &specs[si],
                    &shared,
                    &cfg.model,
                    &cfg.train,
                    &base_ida,
                    seed,
                );
                *slots[i].lock().unwrap() = Some(row);
                note(verbosity, &format!("run {}/{} done", i + 1, items.len()));
            });
        }
    });

    let mut rows: Vec<(usize, AblationRow)> = Vec::with_capacity(items.len());
    for (slot, &(si, _)) in slots.iter().zip(&items) {
        let row = slot
            .lock()
            .unwrap()
            .take()
            .expect("worker claimed every index below items.len()")
            .map_err(CliError::runtime_from)?;
        rows.push((si, row));
    }

    let mut writer = csv::Writer::from_path(recorder.output("ablation.csv"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for (si, row) in &rows {
        writer
            .serialize(csv_row(&specs[*si], row))
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))?;

    let plain: Vec<AblationRow> = rows.iter().map(|(_, r)| r.clone()).collect();
    let means = mean_mse_by_label(&plain);
    let mut writer = csv::Writer::from_path(recorder.output("summary.csv"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for (label, mean) in &means {
        writer
            .serialize(SummaryRow {
                label: label.clone(),
                mean_mse: *mean,
                seeds: seeds.len(),
            })
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    recorder.finish()?;

    let (best_label, best_mean_mse) = means
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, v)| (l.clone(), *v))
        .expect("at least one spec ran");
    Ok(AblateReport {
        runs: rows.len(),
        specs: specs.len(),
        seeds: seeds.len(),
        best_label,
        best_mean_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AblationConfig;

    #[test]
    fn axes_expand_without_duplicate_specs() {
        let specs = collect_specs(&[
            AblationAxis::Components,
            AblationAxis::Augmentation,
            AblationAxis::Translator,
            AblationAxis::Neutral,
        ]);
        // 16 component/pooling combos; the full default appears in every
        // matrix and is kept once, so augmentation adds 3, translator 2,
        // neutral 1.
        assert_eq!(specs.len(), 16 + 3 + 2 + 1);
        let mut labels: Vec<String> = specs.iter().map(AblationSpec::label).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), specs.len());
    }

    #[test]
    fn parallel_and_serial_tables_agree() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = crate::runner::tests_support::small_exported_config(dir.path(), 11);
        cfg.ablation = AblationConfig {
            axes: vec![AblationAxis::Neutral],
            seeds: vec![0, 1],
        };

        let serial_out = dir.path().join("serial");
        let serial = ablate(&cfg, &serial_out, 1, 0).unwrap();
        let parallel_out = dir.path().join("parallel");
        let parallel = ablate(&cfg, &parallel_out, 4, 0).unwrap();

        assert_eq!(serial.runs, 4);
        assert_eq!(parallel.runs, 4);
        let a = std::fs::read_to_string(serial_out.join("ablation.csv")).unwrap();
        let b = std::fs::read_to_string(parallel_out.join("ablation.csv")).unwrap();
        assert_eq!(a, b);
        assert_eq!(serial.best_label, parallel.best_label);
    }
}
