//! Validation metrics and analysis: MSE over a split, kernel-density
//! export for prediction/label distributions, agreement binning, and the
//! centroid-separation measure of individual clustering.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Modality, Sample, Split};
use crate::error::{CmisError, Result};
use crate::fmath;
use crate::ida::IdaConfig;
use crate::loss;
use crate::model::{predict_batch, HeadKind, ModelState, PipelinePlan};
use crate::rng;
use crate::tape::Tape;

/// Benchmark figures from the full-scale licensed dataset. Desk-scale
/// results are displayed next to them for orientation only; they are not
/// reproduction targets.
pub mod reference {
    /// Best validation MSE on the full-scale benchmark.
    pub const VALIDATION_MSE: f64 = 0.057962;
    /// Validation MSE in the all-to-visual modality setting.
    pub const ALL_TO_VISUAL_MSE: f64 = 0.053065;
    /// Session-2 centroid-separation total before standardization.
    pub const SEPARATION_TOTAL_BEFORE: f64 = 17.4640;
    /// Session-2 centroid-separation total after standardization.
    pub const SEPARATION_TOTAL_AFTER: f64 = 38.9919;
}

/// MSE plus the per-sample predictions that produced it, kept for density
/// export.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub mse: f64,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

/// Runs eval-mode forward passes over the samples and returns one
/// prediction per sample, in order. `head` selects the final or the
/// temporary regression head.
pub fn predictions(
    state: &ModelState,
    samples: &[&Sample],
    head: HeadKind,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let plan = PipelinePlan {
        head,
        ..PipelinePlan::evaluation(&state.config)
    };
    predictions_with_plan(state, samples, &plan, batch_size)
}

/// Like [`predictions`](predictions) but under a caller-supplied pipeline
/// plan, so partial cascades can be measured (for example the temporary
/// head without translators during pre-training). The plan's mode is
/// forced to evaluation and augmentation stays off.
pub fn predictions_with_plan(
    state: &ModelState,
    samples: &[&Sample],
    plan: &PipelinePlan,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(CmisError::EmptyInput {
            context: String::from("evaluation split"),
        });
    }
    assert!(batch_size > 0, "batch size must be positive");
    let cfg = state.config;
    let plan = PipelinePlan {
        mode: crate::ida::Mode::Eval,
        ..*plan
    };
    let ida = IdaConfig::disabled();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let motions: Vec<_> = chunk.iter().map(|s| &s.motion.diffs).collect();
        let batch = predict_batch(&mut tape, &motions, &vars, &cfg, &plan, &ida, |_| {
            rng::stream(0, &[rng::label::IDA])
        })?;
        for r in 0..chunk.len() {
            out.push(tape.value(batch).get(r, 0));
        }
    }
    Ok(out)
}

/// Validation MSE over a split, together with the raw predictions.
pub fn evaluate_mse(
    state: &ModelState,
    samples: &[&Sample],
    batch_size: usize,
) -> Result<Evaluation> {
    let predictions = self::predictions(state, samples, HeadKind::Final, batch_size)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let mse = loss::mse(&labels, &predictions)?;
    Ok(Evaluation {
        mse,
        predictions,
        labels,
    })
}

/// Fixed evaluation grid for density export: 241 points over [-1.2, 1.2].
pub const DENSITY_GRID_MIN: f64 = -1.2;
pub const DENSITY_GRID_MAX: f64 = 1.2;
pub const DENSITY_GRID_POINTS: usize = 241;

/// Default Gaussian kernel bandwidth for density curves.
pub const DENSITY_BANDWIDTH: f64 = 0.05;

/// A kernel density estimate sampled on the fixed grid.
#[derive(Clone, Debug)]
pub struct DensityTable {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityTable {
    /// Height of the highest density point; the quantity compared in the
    /// augmentation-effect experiments.
    pub fn peak_height(&self) -> f64 {
        self.density.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Gaussian kernel density estimate of `values` on the fixed grid.
pub fn kernel_density(values: &[f64], bandwidth: f64) -> Result<DensityTable> {
    if values.is_empty() {
        return Err(CmisError::EmptyInput {
            context: String::from("density estimation"),
        });
    }
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(CmisError::config("density bandwidth must be positive"));
    }
    let step = (DENSITY_GRID_MAX - DENSITY_GRID_MIN) / (DENSITY_GRID_POINTS - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * bandwidth * fmath::sqrt(2.0 * core::f64::consts::PI));
    let mut grid = Vec::with_capacity(DENSITY_GRID_POINTS);
    let mut density = Vec::with_capacity(DENSITY_GRID_POINTS);
    for i in 0..DENSITY_GRID_POINTS {
        let x = DENSITY_GRID_MIN + step * i as f64;
        let mut acc = 0.0;
        for &v in values {
            let u = (x - v) / bandwidth;
            acc += fmath::exp(-0.5 * u * u);
        }
        grid.push(x);
        density.push(acc * norm);
    }
    Ok(DensityTable {
        grid,
        density,
        bandwidth,
    })
}

/// The four agreement ranges: [-1,0), [0,0.25), [0.25,0.5), [0.5,1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AgreementBin {
    Negative,
    Low,
    Mid,
    High,
}

impl AgreementBin {
    pub const ALL: [AgreementBin; 4] = [
        AgreementBin::Negative,
        AgreementBin::Low,
        AgreementBin::Mid,
        AgreementBin::High,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AgreementBin::Negative => "[-1,0)",
            AgreementBin::Low => "[0,0.25)",
            AgreementBin::Mid => "[0.25,0.5)",
            AgreementBin::High => "[0.5,1]",
        }
    }
}

/// Assigns a label to its agreement bin; `None` outside [-1, 1]. The
/// partition is right-open except at 1, which belongs to the top bin.
pub fn bin_of(label: f64) -> Option<AgreementBin> {
    if !(-1.0..=1.0).contains(&label) {
        return None;
    }
    Some(if label < 0.0 {
        AgreementBin::Negative
    } else if label < 0.25 {
        AgreementBin::Low
    } else if label < 0.5 {
        AgreementBin::Mid
    } else {
        AgreementBin::High
    })
}

/// One (individual, bin) cluster center and its minimum distance to any
/// different-bin center of the other individual.
#[derive(Clone, Debug)]
pub struct CentroidEntry {
    pub individual: String,
    pub bin: AgreementBin,
    pub center: Vec<f64>,
    pub min_cross_distance: f64,
}

/// Centroid-separation report over exactly two individuals.
#[derive(Clone, Debug)]
pub struct CentroidReport {
    pub centers: Vec<CentroidEntry>,
    /// (individual, bin) pairs with no samples, omitted from the totals.
    pub omitted: Vec<(String, AgreementBin)>,
    /// Sum of the minimum cross distances over all included centers.
    pub total: f64,
}

/// Computes per-(individual, bin) feature centers and, for each, the
/// Euclidean distance to the nearest center of the *other* individual in a
/// *different* bin. Requires exactly two distinct individuals.
pub fn centroid_separation(
    features: &[Vec<f64>],
    labels: &[f64],
    individuals: &[String],
) -> Result<CentroidReport> {
    if features.len() != labels.len() || labels.len() != individuals.len() {
        return Err(CmisError::LengthMismatch {
            context: String::from("centroid separation inputs"),
            left: features.len(),
            right: labels.len().min(individuals.len()),
        });
    }
    let mut ids: Vec<&String> = Vec::new();
    for id in individuals {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if ids.len() != 2 {
        return Err(CmisError::config(
            "centroid separation requires exactly two individuals",
        ));
    }
    let width = features
        .first()
        .map(|f| f.len())
        .ok_or_else(|| CmisError::EmptyInput {
            context: String::from("centroid separation"),
        })?;

    // Accumulate per-(individual, bin) means.
    let mut centers: Vec<CentroidEntry> = Vec::new();
    let mut omitted = Vec::new();
    for id in &ids {
        for bin in AgreementBin::ALL {
            let mut acc = alloc::vec![0.0; width];
            let mut count = 0usize;
            for ((f, &l), sid) in features.iter().zip(labels).zip(individuals) {
                if sid == *id && bin_of(l) == Some(bin) {
                    if f.len() != width {
                        return Err(CmisError::LengthMismatch {
                            context: String::from("centroid feature width"),
                            left: width,
                            right: f.len(),
                        });
                    }
                    for (a, &v) in acc.iter_mut().zip(f) {
                        *a += v;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                omitted.push(((*id).clone(), bin));
            } else {
                for a in acc.iter_mut() {
                    *a /= count as f64;
                }
                centers.push(CentroidEntry {
                    individual: (*id).clone(),
                    bin,
                    center: acc,
                    min_cross_distance: f64::INFINITY,
                });
            }
        }
    }

    // Minimum distance to a different-bin center of the other individual.
    let snapshot: Vec<(String, AgreementBin, Vec<f64>)> = centers
        .iter()
        .map(|c| (c.individual.clone(), c.bin, c.center.clone()))
        .collect();
    let mut total = 0.0;
    for entry in centers.iter_mut() {
        let mut best = f64::INFINITY;
        for (id, bin, center) in &snapshot {
            if *id != entry.individual && *bin != entry.bin {
                let d = euclidean(&entry.center, center);
                best = best.min(d);
            }
        }
        if best.is_finite() {
            entry.min_cross_distance = best;
            total += best;
        } else {
            // No eligible counterpart: flag rather than fabricate a distance.
            omitted.push((entry.individual.clone(), entry.bin));
        }
    }
    centers.retain(|c| c.min_cross_distance.is_finite());
    Ok(CentroidReport {
        centers,
        omitted,
        total,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    fmath::sqrt(sum)
}

/// Per-sample features tapped at the sequence scale, before and after the
/// sequence translator subtracts its predicted neutral.
#[derive(Clone, Debug)]
pub struct StandardizationTaps {
    /// Time-mean of the emotional sequence features, one row per sample.
    pub pre: Vec<Vec<f64>>,
    /// Time-mean of the standardized sequence features, one row per sample.
    pub post: Vec<Vec<f64>>,
}

/// Extracts the centroid-analysis features for each sample: the sequence
/// features entering the sequence translator (`pre`) and the standardized
/// features leaving it (`post`), each reduced to one vector by a time mean.
/// The time mean is used at both taps, regardless of the configured
/// pooling, so the two point clouds live in directly comparable spaces.
/// Runs in evaluation mode with augmentation off. Without translators the
/// two taps coincide.
pub fn standardization_taps(
    state: &ModelState,
    samples: &[&Sample],
) -> Result<StandardizationTaps> {
    use crate::model::{
        emotional_frame_features, emotional_sequence_features, standardized_frame_features,
        standardized_sequence_features,
    };

    if samples.is_empty() {
        return Err(CmisError::EmptyInput {
            context: String::from("standardization taps"),
        });
    }
    let cfg = state.config;
    let ida = IdaConfig::disabled();
    let mut pre = Vec::with_capacity(samples.len());
    let mut post = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let mut stream = rng::stream(0, &[rng::label::IDA]);
        let motion = tape.constant(sample.motion.diffs.clone());
        let v_fe = emotional_frame_features(
            &mut tape,
            motion,
            &vars,
            &cfg,
            &ida,
            crate::ida::Mode::Eval,
            &mut stream,
        )?;
        let (v_fe_hat, _) = standardized_frame_features(&mut tape, v_fe, &vars, &cfg, true)?;
        let v_se = emotional_sequence_features(
            &mut tape,
            v_fe_hat,
            &vars,
            &cfg,
            &ida,
            crate::ida::Mode::Eval,
            &mut stream,
        )?;
        let (v_se_hat, _) = standardized_sequence_features(&mut tape, v_se, &vars, &cfg, true)?;
        let before = crate::pooling::global_pool(&mut tape, v_se)?;
        let after = crate::pooling::global_pool(&mut tape, v_se_hat)?;
        pre.push(tape.value(before).data().to_vec());
        post.push(tape.value(after).data().to_vec());
    }
    Ok(StandardizationTaps { pre, post })
}

/// Train/eval modality filters for the cross-modality experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ModalityMode {
    AllToAll,
    AllToVisual,
    VisualToAll,
    VisualToVisual,
}

impl ModalityMode {
    pub const ALL: [ModalityMode; 4] = [
        ModalityMode::AllToAll,
        ModalityMode::AllToVisual,
        ModalityMode::VisualToAll,
        ModalityMode::VisualToVisual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModalityMode::AllToAll => "all-to-all",
            ModalityMode::AllToVisual => "all-to-visual",
            ModalityMode::VisualToAll => "visual-to-all",
            ModalityMode::VisualToVisual => "visual-to-visual",
        }
    }

    fn keep(filter_visual: bool, s: &Sample) -> bool {
        !filter_visual || s.modality == Modality::Visual
    }

    /// Applies this mode's filter to one side of the experiment.
    pub fn filter<'a>(&self, samples: &'a [Sample], split: Split) -> Vec<&'a Sample> {
        let visual_only = matches!(
            (self, split),
            (ModalityMode::VisualToAll | ModalityMode::VisualToVisual, Split::Train)
                | (ModalityMode::AllToVisual | ModalityMode::VisualToVisual, Split::Validation)
        );
        samples
            .iter()
            .filter(|s| Self::keep(visual_only, s))
            .collect()
    }
}
