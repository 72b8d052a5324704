//! The `analyze` verb: prediction/label density curves and the
//! two-individual centroid-separation report, from a trained checkpoint.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use cmis_core::data::{Sample, Split};
use cmis_core::eval::{
    centroid_separation, evaluate_mse, kernel_density, reference, standardization_taps,
    CentroidReport, DensityTable,
};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::runmeta::RunRecorder;
use crate::runner::prepare_data;

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub samples: usize,
    pub mse: f64,
    pub label_density_peak: f64,
    pub prediction_density_peak: f64,
    pub individuals: [String; 2],
    pub separation_before: f64,
    pub separation_after: f64,
    /// Full-scale figures shown for orientation.
    pub reference_separation_before: f64,
    pub reference_separation_after: f64,
}

impl AnalyzeReport {
    pub fn summary(&self) -> String {
        format!(
            "analyze: samples={} mse={} density_peaks labels={} predictions={} \
             separation before={} after={} (reference before={} after={})",
            self.samples,
            self.mse,
            self.label_density_peak,
            self.prediction_density_peak,
            self.separation_before,
            self.separation_after,
            self.reference_separation_before,
            self.reference_separation_after,
        )
    }
}

/// The two individuals with the most samples, ties broken by id, so the
/// default report is deterministic.
fn default_pair(samples: &[&Sample]) -> Result<[String; 2]> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.motion.individual_id.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(CliError::runtime(format!(
            "centroid separation needs two individuals, the split has {}",
            counts.len()
        )));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok([ranked[0].0.to_string(), ranked[1].0.to_string()])
}

/// Runs the full analysis: `densities.csv`, `centroids.csv`,
/// `analyze.json`, and optionally `figures/*.svg`.
pub fn analyze(
    checkpoint: &Path,
    supplied_config: Option<&ExperimentConfig>,
    out_dir: &Path,
    svg: bool,
) -> Result<AnalyzeReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(supplied) = supplied_config {
        ckpt.guard_config(supplied)?;
    }
    let cfg = &ckpt.config;
    let mut recorder = RunRecorder::begin("analyze", cfg, out_dir)?;
    let data = prepare_data(cfg)?;
    let pool: &[Sample] = match cfg.analyze.split {
        Split::Train => &data.train,
        Split::Validation => &data.validation,
    };
    if pool.is_empty() {
        return Err(CliError::runtime("the analyzed split is empty"));
    }
    let refs: Vec<&Sample> = pool.iter().collect();

    // Densities of the labels and of the model's predictions.
    let evaluation = evaluate_mse(&ckpt.model, &refs, cfg.train.batch_size)
        .map_err(CliError::runtime_from)?;
    let labels = kernel_density(&evaluation.labels, cfg.analyze.bandwidth)
        .map_err(CliError::runtime_from)?;
    let predictions = kernel_density(&evaluation.predictions, cfg.analyze.bandwidth)
        .map_err(CliError::runtime_from)?;
    write_densities(&recorder.output("densities.csv"), &labels, &predictions)?;

    // Centroid separation before and after standardization, over two
    // individuals.
    let pair = match &cfg.analyze.individuals {
        Some(pair) => pair.clone(),
        None => default_pair(&refs)?,
    };
    let chosen: Vec<&Sample> = refs
        .iter()
        .copied()
        .filter(|s| pair.contains(&s.motion.individual_id))
        .collect();
    if chosen.is_empty() {
        return Err(CliError::runtime(format!(
            "no samples belong to individuals {} and {}",
            pair[0], pair[1]
        )));
    }
    let taps = standardization_taps(&ckpt.model, &chosen).map_err(CliError::runtime_from)?;
    let chosen_labels: Vec<f64> = chosen.iter().map(|s| s.label).collect();
    let chosen_ids: Vec<String> = chosen
        .iter()
        .map(|s| s.motion.individual_id.clone())
        .collect();
    let before = centroid_separation(&taps.pre, &chosen_labels, &chosen_ids)
        .map_err(CliError::runtime_from)?;
    let after = centroid_separation(&taps.post, &chosen_labels, &chosen_ids)
        .map_err(CliError::runtime_from)?;
    write_centroids(&recorder.output("centroids.csv"), &before, &after)?;

    if svg {
        let figures = out_dir.join("figures");
        std::fs::create_dir_all(&figures)
            .map_err(|e| CliError::runtime(format!("{}: {e}", figures.display())))?;
        std::fs::write(
            recorder.output("figures/densities.svg"),
            density_svg(&labels, &predictions),
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(
            recorder.output("figures/separation.svg"),
            separation_svg(&before, &after),
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }

    let report = AnalyzeReport {
        samples: refs.len(),
        mse: evaluation.mse,
        label_density_peak: labels.peak_height(),
        prediction_density_peak: predictions.peak_height(),
        individuals: pair,
        separation_before: before.total,
        separation_after: after.total,
        reference_separation_before: reference::SEPARATION_TOTAL_BEFORE,
        reference_separation_after: reference::SEPARATION_TOTAL_AFTER,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(recorder.output("analyze.json"), json)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    recorder.finish()?;
    Ok(report)
}

fn write_densities(path: &Path, labels: &DensityTable, predictions: &DensityTable) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        grid: f64,
        label_density: f64,
        prediction_density: f64,
    }
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::runtime(e.to_string()))?;
    for i in 0..labels.grid.len() {
        writer
            .serialize(Row {
                grid: labels.grid[i],
                label_density: labels.density[i],
                prediction_density: predictions.density[i],
            })
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))
}

fn write_centroids(path: &Path, before: &CentroidReport, after: &CentroidReport) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        tap: &'static str,
        individual: &'a str,
        bin: &'static str,
        min_cross_distance: f64,
    }
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| CliError::runtime(e.to_string()))?;
    for (tap, report) in [("before", before), ("after", after)] {
        for entry in &report.centers {
            writer
                .serialize(Row {
                    tap,
                    individual: &entry.individual,
                    bin: entry.bin.name(),
                    min_cross_distance: entry.min_cross_distance,
                })
                .map_err(|e| CliError::runtime(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| CliError::runtime(e.to_string()))
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 40.0;

fn polyline(xs: &[f64], ys: &[f64], x_max_abs: f64, y_max: f64, color: &str) -> String {
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let px = MARGIN + (x + x_max_abs) / (2.0 * x_max_abs) * (SVG_W - 2.0 * MARGIN);
            let py = SVG_H - MARGIN - (y / y_max) * (SVG_H - 2.0 * MARGIN);
            format!("{px:.1},{py:.1}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
        points.join(" ")
    )
}

/// Label and prediction densities as two polylines over the fixed grid.
fn density_svg(labels: &DensityTable, predictions: &DensityTable) -> String {
    let y_max = labels
        .peak_height()
        .max(predictions.peak_height())
        .max(f64::MIN_POSITIVE);
    let x_max_abs = labels.grid.last().copied().unwrap_or(1.2);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        y0 = SVG_H - MARGIN,
        x1 = SVG_W - MARGIN,
    );
    svg.push_str(&polyline(&labels.grid, &labels.density, x_max_abs, y_max, "#1f77b4"));
    svg.push('\n');
    svg.push_str(&polyline(
        &predictions.grid,
        &predictions.density,
        x_max_abs,
        y_max,
        "#d62728",
    ));
    svg.push_str(
        "\n<text x=\"50\" y=\"20\" fill=\"#1f77b4\" font-size=\"12\">labels</text>\n\
         <text x=\"110\" y=\"20\" fill=\"#d62728\" font-size=\"12\">predictions</text>\n</svg>\n",
    );
    svg
}

/// Per-(individual, bin) nearest-cross-centroid distances, before vs after
/// standardization, as paired bars.
fn separation_svg(before: &CentroidReport, after: &CentroidReport) -> String {
    let mut pairs: Vec<(String, f64, f64)> = Vec::new();
    for b in &before.centers {
        let key = format!("{} {}", b.individual, b.bin.name());
        let matching = after
            .centers
            .iter()
            .find(|a| a.individual == b.individual && a.bin == b.bin)
            .map_or(0.0, |a| a.min_cross_distance);
        pairs.push((key, b.min_cross_distance, matching));
    }
    let y_max = pairs
        .iter()
        .flat_map(|(_, b, a)| [*b, *a])
        .fold(f64::MIN_POSITIVE, f64::max);
    let slot = (SVG_W - 2.0 * MARGIN) / pairs.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, (key, b, a)) in pairs.iter().enumerate() {
        let x = MARGIN + i as f64 * slot;
        let bar = (slot - 8.0) / 2.0;
        for (j, (value, color)) in [(b, "#1f77b4"), (a, "#d62728")].iter().enumerate() {
            let h = (**value / y_max) * (SVG_H - 2.0 * MARGIN);
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar:.1}\" height=\"{h:.1}\" fill=\"{color}\"/>\n",
                x + j as f64 * bar,
                SVG_H - MARGIN - h,
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"9\" transform=\"rotate(30 {:.1} {})\">{key}</text>\n",
            x,
            SVG_H - MARGIN + 12.0,
            x,
            SVG_H - MARGIN + 12.0,
        ));
    }
    svg.push_str(
        "<text x=\"50\" y=\"20\" fill=\"#1f77b4\" font-size=\"12\">before</text>\n\
         <text x=\"110\" y=\"20\" fill=\"#d62728\" font-size=\"12\">after</text>\n</svg>\n",
    );
    svg
}
