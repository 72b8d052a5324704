//! Declarative experiment matrix: one spec per (component set, pooling,
//! augmentation placement, translator variant, neutral-bank source)
//! combination, each run as a complete training protocol plus validation
//! pass under shared seeds. Matrix constructors cover the standard axes:
//! the 16-entry component/pooling grid, the four augmentation placements,
//! the three translator variants, and the two neutral-bank sources.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{select_neutral_nonbackchannel, select_neutral_peak, NeutralBank, Sample};
use crate::error::Result;
use crate::eval;
use crate::ida::IdaConfig;
use crate::model::{ComponentSet, ModelConfig, ModelState, PoolingKind};
use crate::train::{run_full_protocol, TickClock, TrainConfig, TrainData};
use crate::translator::TranslatorVariant;

/// Where the augmentation stage sits in the cascade.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IdaPlacement {
    None,
    /// After the frame-level emotional encoder only.
    AfterFrameEncoder,
    /// After the sequence-level emotional encoder only.
    AfterSequenceEncoder,
    Both,
}

impl IdaPlacement {
    pub const ALL: [IdaPlacement; 4] = [
        IdaPlacement::None,
        IdaPlacement::AfterFrameEncoder,
        IdaPlacement::AfterSequenceEncoder,
        IdaPlacement::Both,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IdaPlacement::None => "none",
            IdaPlacement::AfterFrameEncoder => "flee",
            IdaPlacement::AfterSequenceEncoder => "slee",
            IdaPlacement::Both => "both",
        }
    }

    /// Applies the placement to an augmentation config, keeping its noise
    /// and masking strengths.
    pub fn configure(&self, base: &IdaConfig) -> IdaConfig {
        IdaConfig {
            enabled_after_flee: matches!(self, IdaPlacement::AfterFrameEncoder | IdaPlacement::Both),
            enabled_after_slee: matches!(
                self,
                IdaPlacement::AfterSequenceEncoder | IdaPlacement::Both
            ),
            ..*base
        }
    }
}

/// How the neutral bank is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NeutralSource {
    /// Training samples whose label falls in a window around the density
    /// peak.
    PeakLabels,
    /// Explicitly annotated no-backchannel samples.
    NonBackchannel,
}

impl NeutralSource {
    pub const ALL: [NeutralSource; 2] = [NeutralSource::PeakLabels, NeutralSource::NonBackchannel];

    pub fn name(&self) -> &'static str {
        match self {
            NeutralSource::PeakLabels => "peak",
            NeutralSource::NonBackchannel => "non_backchannel",
        }
    }
}

/// One experiment in the matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationSpec {
    pub components: ComponentSet,
    pub pooling: PoolingKind,
    pub ida: IdaPlacement,
    pub translator: TranslatorVariant,
    pub neutral: NeutralSource,
}

impl Default for AblationSpec {
    /// The full cascade as trained by default: every module, attention
    /// pooling, augmentation at both scales, recurrent translator, peak
    /// neutral selection.
    fn default() -> Self {
        AblationSpec {
            components: ComponentSet::FULL,
            pooling: PoolingKind::Tap,
            ida: IdaPlacement::Both,
            translator: TranslatorVariant::EdLstm,
            neutral: NeutralSource::PeakLabels,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        self.components.validate()
    }

    /// Uses both scales' encoders rather than one.
    pub fn is_multi_scale(&self) -> bool {
        self.components.fle && self.components.sle
    }

    /// Human-readable row key, unique within any of the standard matrices.
    pub fn label(&self) -> String {
        let pooling = match self.pooling {
            PoolingKind::Global => "global",
            PoolingKind::Tap => "tap",
        };
        let translator = match self.translator {
            TranslatorVariant::EdLstm => "ed_lstm",
            TranslatorVariant::EdGru => "ed_gru",
            TranslatorVariant::Attention => "attention",
        };
        format!(
            "{} pooling={} ida={} translator={} neutral={}",
            self.components.label(),
            pooling,
            self.ida.name(),
            translator,
            self.neutral.name()
        )
    }

    /// Projects the spec onto a model configuration: components, pooling
    /// and translator variant come from the spec, widths from the base.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            components: self.components,
            pooling: self.pooling,
            translator_variant: self.translator,
            ..*base
        }
    }
}

/// The eight component combinations of the standard grid, single-scale
/// rows first.
pub fn component_combinations() -> [ComponentSet; 8] {
    let set = |fle, flt, sle, slt| ComponentSet { fle, flt, sle, slt };
    [
        set(true, false, false, false),  // FLE+R
        set(true, true, false, false),   // FLE+FLT+R
        set(false, false, true, false),  // SLE+R
        set(false, false, true, true),   // SLE+SLT+R
        set(true, false, true, false),   // FLE+SLE+R
        set(true, true, true, false),    // FLE+FLT+SLE+R
        set(true, false, true, true),    // FLE+SLE+SLT+R
        set(true, true, true, true),     // FLE+FLT+SLE+SLT+R
    ]
}

/// The 16-spec component/pooling grid: every combination from
/// [`component_combinations`](component_combinations) under both pooling
/// operators, other axes at their defaults.
pub fn component_matrix() -> Vec<AblationSpec> {
    let mut specs = Vec::with_capacity(16);
    for components in component_combinations() {
        for pooling in [PoolingKind::Global, PoolingKind::Tap] {
            specs.push(AblationSpec {
                components,
                pooling,
                ..AblationSpec::default()
            });
        }
    }
    specs
}

/// The four augmentation placements on the full cascade.
pub fn augmentation_matrix() -> Vec<AblationSpec> {
    IdaPlacement::ALL
        .iter()
        .map(|&ida| AblationSpec {
            ida,
            ..AblationSpec::default()
        })
        .collect()
}

/// The three sequence-translator variants on the full cascade.
pub fn translator_matrix() -> Vec<AblationSpec> {
    [
        TranslatorVariant::Attention,
        TranslatorVariant::EdGru,
        TranslatorVariant::EdLstm,
    ]
    .iter()
    .map(|&translator| AblationSpec {
        translator,
        ..AblationSpec::default()
    })
    .collect()
}

/// The two neutral-bank sources on the full cascade.
pub fn neutral_matrix() -> Vec<AblationSpec> {
    NeutralSource::ALL
        .iter()
        .map(|&neutral| AblationSpec {
            neutral,
            ..AblationSpec::default()
        })
        .collect()
}

/// Inputs shared by every run in a matrix.
pub struct AblationData<'a> {
    pub train: &'a [Sample],
    pub validation: &'a [Sample],
    /// Annotated no-backchannel samples, consumed by the non-backchannel
    /// neutral source.
    pub negatives: &'a [Sample],
    /// Label window of the peak neutral source.
    pub peak_center: f64,
    pub peak_edge: f64,
}

impl AblationData<'_> {
    pub fn bank(&self, source: NeutralSource) -> NeutralBank {
        match source {
            NeutralSource::PeakLabels => {
                select_neutral_peak(self.train, self.peak_center, self.peak_edge)
            }
            NeutralSource::NonBackchannel => select_neutral_nonbackchannel(self.negatives),
        }
    }
}

/// One results-table row.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub mse: f64,
    pub skipped_samples: usize,
}

/// Trains the spec's pipeline from scratch under `seed` and measures the
/// validation MSE. The spec is validated before any work happens.
pub fn run_spec(
    spec: &AblationSpec,
    data: &AblationData,
    base_model: &ModelConfig,
    train_cfg: &TrainConfig,
    ida_strength: &IdaConfig,
    seed: u64,
) -> Result<AblationRow> {
    spec.validate()?;
    let model_cfg = spec.model_config(base_model);
    model_cfg.validate()?;
    let ida = spec.ida.configure(ida_strength);
    let bank = data.bank(spec.neutral);
    let cfg = TrainConfig { seed, ..*train_cfg };
    let mut state = ModelState::init(model_cfg, seed)?;
    let train_data = TrainData {
        train: data.train,
        validation: data.validation,
        bank: &bank,
    };
    // The per-epoch log is discarded here, so a synthetic clock suffices
    // and keeps rows identical across hosts.
    let mut clock = TickClock::default();
    let outcome = run_full_protocol(&mut state, &train_data, &cfg, &ida, &mut clock)?;
    let refs: Vec<&Sample> = data.validation.iter().collect();
    let evaluation = eval::evaluate_mse(&state, &refs, cfg.batch_size)?;
    Ok(AblationRow {
        label: spec.label(),
        seed,
        mse: evaluation.mse,
        skipped_samples: outcome.skipped_samples,
    })
}

/// Runs every spec under every seed, in spec-major order. Each run is
/// self-contained and fully seeded, so the table is independent of
/// execution order or parallel scheduling.
pub fn run_matrix(
    specs: &[AblationSpec],
    seeds: &[u64],
    data: &AblationData,
    base_model: &ModelConfig,
    train_cfg: &TrainConfig,
    ida_strength: &IdaConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(specs.len() * seeds.len());
    for spec in specs {
        for &seed in seeds {
            rows.push(run_spec(spec, data, base_model, train_cfg, ida_strength, seed)?);
        }
    }
    Ok(rows)
}

/// Mean MSE per spec label over the seeds in a results table, in first-seen
/// label order.
pub fn mean_mse_by_label(rows: &[AblationRow]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for row in rows {
        match order.iter().position(|l| l == &row.label) {
            Some(i) => {
                sums[i].0 += row.mse;
                sums[i].1 += 1;
            }
            None => {
                order.push(row.label.clone());
                sums.push((row.mse, 1));
            }
        }
    }
    order
        .into_iter()
        .zip(sums)
        .map(|(label, (sum, n))| (label, sum / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig, SynthDataset, PEAK_CENTER};

    fn tiny_synth(seed: u64) -> SynthDataset {
        generate_synthetic(&SynthConfig {
            n_individuals: 4,
            samples_per_individual: 5,
            motion_len: 6,
            width: 5,
            noise_scale: 0.05,
            seed,
            ..SynthConfig::default()
        })
    }

    fn tiny_setup(data: &SynthDataset) -> (AblationData<'_>, ModelConfig, TrainConfig, IdaConfig) {
        let ab_data = AblationData {
            train: &data.train,
            validation: &data.validation,
            negatives: &data.negatives,
            peak_center: PEAK_CENTER,
            peak_edge: 2.0,
        };
        let model = ModelConfig {
            frame_width: 5,
            seq_width: 6,
            attention_width: 4,
            seq_ff_width: 8,
            seq_layers: 1,
            translator_hidden: 4,
            head_hidden: 8,
            head_layers: 1,
            ..ModelConfig::desk(5)
        };
        let train = TrainConfig {
            batch_size: 8,
            n_neutral_draws: 2,
            stage_epochs: [1, 1, 1, 1],
            ..TrainConfig::default()
        };
        (ab_data, model, train, IdaConfig::default())
    }

    #[test]
    fn component_matrix_is_the_full_grid() {
        let specs = component_matrix();
        assert_eq!(specs.len(), 16);
        let labels: Vec<String> = specs.iter().map(|s| s.label()).collect();
        let mut unique = labels.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 16, "labels must be unique");
        assert!(specs.iter().all(|s| s.validate().is_ok()));
        assert_eq!(specs.iter().filter(|s| s.is_multi_scale()).count(), 8);
        assert_eq!(
            specs
                .iter()
                .filter(|s| s.pooling == PoolingKind::Global)
                .count(),
            8
        );
        assert!(labels.iter().any(|l| l.starts_with("FLE+FLT+SLE+SLT+R ")));
    }

    #[test]
    fn axis_matrices_cover_their_variants() {
        assert_eq!(augmentation_matrix().len(), 4);
        assert_eq!(translator_matrix().len(), 3);
        assert_eq!(neutral_matrix().len(), 2);
        let full = AblationSpec::default();
        assert!(augmentation_matrix()
            .iter()
            .all(|s| s.components == full.components && s.pooling == full.pooling));
    }

    #[test]
    fn placement_configures_the_augmentation_flags() {
        let base = IdaConfig::default();
        let cases = [
            (IdaPlacement::None, false, false),
            (IdaPlacement::AfterFrameEncoder, true, false),
            (IdaPlacement::AfterSequenceEncoder, false, true),
            (IdaPlacement::Both, true, true),
        ];
        for (placement, flee, slee) in cases {
            let cfg = placement.configure(&base);
            assert_eq!(cfg.enabled_after_flee, flee, "{placement:?}");
            assert_eq!(cfg.enabled_after_slee, slee, "{placement:?}");
            assert_eq!(cfg.noise_std, base.noise_std);
            assert_eq!(cfg.mask_prob, base.mask_prob);
        }
    }

    #[test]
    fn invalid_specs_are_rejected_before_any_run() {
        let data = tiny_synth(1);
        let (ab_data, model, train, ida) = tiny_setup(&data);
        let spec = AblationSpec {
            components: ComponentSet {
                fle: false,
                flt: true,
                sle: true,
                slt: false,
            },
            ..AblationSpec::default()
        };
        assert!(spec.validate().is_err());
        assert!(run_spec(&spec, &ab_data, &model, &train, &ida, 0).is_err());
    }

    #[test]
    fn single_module_smoke_run_logs_one_row() {
        let data = tiny_synth(2);
        let (ab_data, model, train, ida) = tiny_setup(&data);
        let spec = AblationSpec {
            components: ComponentSet {
                fle: true,
                flt: false,
                sle: false,
                slt: false,
            },
            pooling: PoolingKind::Global,
            ..AblationSpec::default()
        };
        let row = run_spec(&spec, &ab_data, &model, &train, &ida, 3).unwrap();
        assert!(row.mse.is_finite());
        assert_eq!(row.seed, 3);
        assert!(row.label.starts_with("FLE+R "));
    }

    #[test]
    fn duplicate_specs_under_one_seed_give_identical_rows() {
        let data = tiny_synth(3);
        let (ab_data, model, train, ida) = tiny_setup(&data);
        let spec = AblationSpec::default();
        let rows = run_matrix(&[spec, spec], &[7], &ab_data, &model, &train, &ida).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], rows[1]);
        let other = run_spec(&spec, &ab_data, &model, &train, &ida, 8).unwrap();
        assert_ne!(rows[0].mse, other.mse);
    }

    #[test]
    fn matrix_emits_one_row_per_spec_per_seed() {
        let data = tiny_synth(4);
        let (ab_data, model, train, ida) = tiny_setup(&data);
        let specs = [
            AblationSpec::default(),
            AblationSpec {
                pooling: PoolingKind::Global,
                ..AblationSpec::default()
            },
        ];
        let rows = run_matrix(&specs, &[0, 1], &ab_data, &model, &train, &ida).unwrap();
        assert_eq!(rows.len(), 4);
        // Spec-major order with seeds inside.
        assert_eq!(rows[0].label, rows[1].label);
        assert_eq!(rows[0].seed, 0);
        assert_eq!(rows[1].seed, 1);
        assert_ne!(rows[0].label, rows[2].label);
        let means = mean_mse_by_label(&rows);
        assert_eq!(means.len(), 2);
        assert!((means[0].1 - (rows[0].mse + rows[1].mse) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn both_neutral_sources_train_to_completion() {
        let data = tiny_synth(5);
        let (ab_data, model, train, ida) = tiny_setup(&data);
        for neutral in NeutralSource::ALL {
            let spec = AblationSpec {
                neutral,
                ..AblationSpec::default()
            };
            let row = run_spec(&spec, &ab_data, &model, &train, &ida, 1).unwrap();
            assert!(row.mse.is_finite(), "{neutral:?}");
        }
    }

    #[test]
    fn translator_variants_train_to_completion() {
        let data = tiny_synth(6);
        let (ab_data, model, train, ida) = tiny_setup(&data);
        for spec in translator_matrix() {
            let row = run_spec(&spec, &ab_data, &model, &train, &ida, 2).unwrap();
            assert!(row.mse.is_finite(), "{}", spec.label());
        }
    }
}
