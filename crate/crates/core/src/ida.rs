//! Implicit data augmentation: elementwise Gaussian noise followed by
//! random zero-masking, applied to latent features during training only.
//!
//! Evaluation mode returns the input variable untouched — the identity is
//! bitwise by construction because no new tape node is created. The noise
//! and mask draws come from a caller-supplied stream so that independent
//! workers stay reproducible.

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Noise and masking switches for latent-feature augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IdaConfig {
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    /// Probability that an element (or frame, see `frame_masking`) is zeroed.
    pub mask_prob: f64,
    /// Apply after the frame-level emotional encoder.
    pub enabled_after_flee: bool,
    /// Apply after the sequence-level emotional encoder.
    pub enabled_after_slee: bool,
    /// Zero whole frames (rows) instead of single elements.
    pub frame_masking: bool,
    /// Rescale surviving elements by 1/(1−mask_prob), inverted-dropout
    /// style. Off by default: masking is plain.
    pub rescale: bool,
}

impl Default for IdaConfig {
    fn default() -> Self {
        IdaConfig {
            noise_std: 0.05,
            mask_prob: 0.1,
            enabled_after_flee: true,
            enabled_after_slee: true,
            frame_masking: false,
            rescale: false,
        }
    }
}

impl IdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(CmisError::config("ida noise_std must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(CmisError::config("ida mask_prob must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Augmentation with both mechanisms switched off; handy for ablations.
    pub fn disabled() -> Self {
        IdaConfig {
            noise_std: 0.0,
            mask_prob: 0.0,
            enabled_after_flee: false,
            enabled_after_slee: false,
            ..IdaConfig::default()
        }
    }
}

/// Whether a forward pass trains (augmentation active) or evaluates
/// (augmentation bypassed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Applies noise-then-mask augmentation to a feature variable.
///
/// Train mode adds `N(0, noise_std²)` noise elementwise and then zeroes
/// elements independently with probability `mask_prob` (whole rows when
/// `frame_masking` is set), drawing noise first and mask second from `rng`.
/// Eval mode returns `x` unchanged and leaves `rng` untouched.
pub fn ida_apply(
    tape: &mut Tape,
    x: Var,
    cfg: &IdaConfig,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Var {
    if mode == Mode::Eval {
        return x;
    }
    let (rows, cols) = tape.value(x).shape();
    let mut out = x;
    if cfg.noise_std > 0.0 {
        let mut noise = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                noise.set(r, c, rng::normal(rng) * cfg.noise_std);
            }
        }
        let noise = tape.constant(noise);
        out = tape.add(out, noise);
    }
    if cfg.mask_prob > 0.0 {
        let keep = if cfg.rescale && cfg.mask_prob < 1.0 {
            1.0 / (1.0 - cfg.mask_prob)
        } else {
            1.0
        };
        if cfg.frame_masking {
            let mut mask = Tensor::zeros(rows, 1);
            for r in 0..rows {
                let v = if rng::uniform(rng) < cfg.mask_prob { 0.0 } else { keep };
                mask.set(r, 0, v);
            }
            let mask = tape.constant(mask);
            out = tape.mul_col(out, mask);
        } else {
            let mut mask = Tensor::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let v = if rng::uniform(rng) < cfg.mask_prob { 0.0 } else { keep };
                    mask.set(r, c, v);
                }
            }
            let mask = tape.constant(mask);
            out = tape.mul(out, mask);
        }
    }
    out
}
