//! Motion-sequence data model and pipeline operations.
//!
//! Landmark sequences are windowed to the last `window_secs` seconds and
//! differenced into motion features (crop happens before differencing, so a
//! `W`-frame window yields `W - 1` motion rows and no spurious boundary
//! diff). Neutral banks group per-individual baseline samples under one of
//! two selection strategies, and modality classification implements the
//! sustained-speech-score rule used by the visual/auditive experiments.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::fmath;
use crate::rng;
use crate::tensor::Tensor;

/// Dataset split tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Validation,
}

/// Backchannel modality tag. `Unknown` until classified (or planted by the
/// synthetic generator).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Modality {
    Visual,
    Auditive,
    Unknown,
}

/// Raw landmark coordinates: one row per frame, `H` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Tensor,
    pub fps: u32,
    pub individual_id: String,
    pub sample_id: String,
}

/// Inter-frame landmark differences: row `t` is `frame[t+1] - frame[t]` of
/// the cropped window.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub diffs: Tensor,
    pub fps: u32,
    pub individual_id: String,
    pub sample_id: String,
}

/// A labeled motion sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub motion: MotionSequence,
    pub label: f64,
    pub split: Split,
    pub modality: Modality,
}

/// How neutral samples are selected for the bank.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "strategy"))]
pub enum NeutralStrategy {
    /// Training samples whose label lies within `center ± edge` (closed
    /// interval).
    Peak { center: f64, edge: f64 },
    /// Samples annotated as containing no backchannel event.
    NonBackchannel,
}

/// Per-individual pools of neutral samples, used only during training.
#[derive(Clone, Debug)]
pub struct NeutralBank {
    pools: BTreeMap<String, Vec<Sample>>,
    strategy: NeutralStrategy,
}

impl NeutralBank {
    pub fn strategy(&self) -> NeutralStrategy {
        self.strategy
    }

    /// Pool for one individual; `None` when the individual has no neutrals.
    pub fn pool(&self, individual_id: &str) -> Option<&[Sample]> {
        self.pools.get(individual_id).map(|p| p.as_slice())
    }

    /// Individuals with at least one pooled sample, in sorted order.
    pub fn individuals(&self) -> impl Iterator<Item = &str> {
        self.pools.keys().map(|k| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    /// Number of individuals with non-empty pools.
    pub fn len(&self) -> usize {
        self.pools.len()
    }
}

/// Crops a landmark sequence to its last `ceil(window_secs * fps)` frames and
/// differences consecutive frames.
///
/// The crop is applied *before* differencing, so the output always has
/// `ceil(window_secs * fps) - 1` rows.
pub fn window_and_diff(seq: &LandmarkSequence, window_secs: f64) -> Result<MotionSequence> {
    assert!(window_secs > 0.0, "window_secs must be positive");
    let window = fmath::ceil(window_secs * seq.fps as f64) as usize;
    let m = seq.frames.rows();
    if m < window {
        return Err(CmisError::TooFewFrames {
            sample_id: seq.sample_id.clone(),
            required: window,
            available: m,
        });
    }
    let start = m - window;
    let h = seq.frames.cols();
    let mut diffs = Tensor::zeros(window - 1, h);
    for t in 0..window - 1 {
        let prev = seq.frames.row_slice(start + t);
        let next = seq.frames.row_slice(start + t + 1);
        for (o, (&n, &p)) in diffs.row_slice_mut(t).iter_mut().zip(next.iter().zip(prev)) {
            *o = n - p;
        }
    }
    Ok(MotionSequence {
        diffs,
        fps: seq.fps,
        individual_id: seq.individual_id.clone(),
        sample_id: seq.sample_id.clone(),
    })
}

/// Builds a neutral bank from training samples whose label lies within
/// `center ± edge` (closed interval, exact comparison).
pub fn select_neutral_peak(dataset: &[Sample], center: f64, edge: f64) -> NeutralBank {
    assert!(edge >= 0.0, "edge must be nonnegative");
    let mut pools: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for sample in dataset {
        if sample.split == Split::Train && fmath::abs(sample.label - center) <= edge {
            pools
                .entry(sample.motion.individual_id.clone())
                .or_default()
                .push(sample.clone());
        }
    }
    NeutralBank {
        pools,
        strategy: NeutralStrategy::Peak { center, edge },
    }
}

/// Builds a neutral bank from explicitly annotated no-backchannel samples,
/// grouped by individual. Banks are keyed independently of the training set,
/// so a negative from an individual absent there still gets a pool.
pub fn select_neutral_nonbackchannel(negatives: &[Sample]) -> NeutralBank {
    let mut pools: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for sample in negatives {
        pools
            .entry(sample.motion.individual_id.clone())
            .or_default()
            .push(sample.clone());
    }
    NeutralBank {
        pools,
        strategy: NeutralStrategy::NonBackchannel,
    }
}

/// Draws `n` neutral samples for one individual: without replacement when the
/// pool is large enough, with replacement otherwise. Deterministic given
/// `seed`.
pub fn draw_neutrals<'a>(
    bank: &'a NeutralBank,
    individual_id: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<&'a Sample>> {
    let pool = bank
        .pool(individual_id)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| CmisError::EmptyPool {
            individual_id: String::from(individual_id),
        })?;
    let mut stream = rng::stream(seed, &[rng::label::NEUTRAL_DRAW]);
    let picks = if pool.len() >= n {
        rng::sample_distinct(&mut stream, pool.len(), n)
    } else {
        (0..n).map(|_| rng::below(&mut stream, pool.len())).collect()
    };
    Ok(picks.into_iter().map(|i| &pool[i]).collect())
}

/// Parameters of the visual/auditive classification rule.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModalityRule {
    /// Frame rate the score stream was sampled at.
    pub fps: u32,
    /// Only the last `window_secs` of scores are inspected.
    pub window_secs: f64,
    /// Scores must strictly exceed this threshold to count.
    pub threshold: f64,
    /// Minimum number of consecutive above-threshold scores.
    pub run_len: usize,
}

impl Default for ModalityRule {
    fn default() -> Self {
        ModalityRule {
            fps: 25,
            window_secs: 3.0,
            threshold: 0.2,
            run_len: 7,
        }
    }
}

/// Classifies a backchannel as auditive iff some run of at least `run_len`
/// consecutive scores within the last window each strictly exceed the
/// threshold; otherwise visual. Scores before the window are ignored, and a
/// window shorter than `run_len` can never satisfy the rule.
pub fn classify_modality(frame_scores: &[f64], rule: &ModalityRule) -> Modality {
    let window = fmath::ceil(rule.window_secs * rule.fps as f64) as usize;
    let start = frame_scores.len().saturating_sub(window);
    let mut run = 0usize;
    for &score in &frame_scores[start..] {
        if score > rule.threshold {
            run += 1;
            if run >= rule.run_len {
                return Modality::Auditive;
            }
        } else {
            run = 0;
        }
    }
    Modality::Visual
}

/// Convenience for tests and the synthetic generator: wraps a motion matrix
/// in a [`Sample`].
pub fn sample_from_motion(
    diffs: Tensor,
    fps: u32,
    individual_id: &str,
    sample_id: &str,
    label: f64,
    split: Split,
    modality: Modality,
) -> Sample {
    Sample {
        motion: MotionSequence {
            diffs,
            fps,
            individual_id: String::from(individual_id),
            sample_id: String::from(sample_id),
        },
        label,
        split,
        modality,
    }
}

/// Reconstructs landmark frames from a motion sequence by prefix summation,
/// starting from a zero first frame. This is the exact inverse of
/// [`window_and_diff`] up to the (unknowable) initial frame.
pub fn integrate_motion(motion: &Tensor) -> Tensor {
    let mut frames = Tensor::zeros(motion.rows() + 1, motion.cols());
    for t in 0..motion.rows() {
        for c in 0..motion.cols() {
            let v = frames.get(t, c) + motion.get(t, c);
            frames.set(t + 1, c, v);
        }
    }
    frames
}

/// Deterministically assigns an integer tag to an individual id for seed
/// derivation, independent of pool iteration order.
pub fn individual_tag(individual_id: &str) -> u64 {
    // FNV-1a; stability matters more than speed here.
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in individual_id.as_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Draws indices for a with-replacement pick; exposed for bookkeeping tests.
pub fn with_replacement(rng: &mut impl RngCore, pool: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng::below(rng, pool)).collect()
}
