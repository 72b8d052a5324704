//! The three training objectives: neutral-approximation, mean squared
//! error, and the translator distance.
//!
//! All losses are positive quantities minimized by gradient descent. The
//! distance `d` underneath the approximation and translator losses is the
//! mean (not sum) elementwise absolute difference, which keeps loss values
//! comparable across feature widths. A sign-convention switch exposes the
//! negated forms for inspection; training code never uses it.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CmisError, Result};
use crate::tape::{Tape, Var};

/// Sign convention applied to a loss value. `Minimized` is the convention
/// used everywhere in training; `Negated` flips the sign for side-by-side
/// inspection of the alternative reading and must never be optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignConvention {
    Minimized,
    Negated,
}

/// Applies a sign convention to a computed loss.
pub fn apply_sign(tape: &mut Tape, loss: Var, sign: SignConvention) -> Var {
    match sign {
        SignConvention::Minimized => loss,
        SignConvention::Negated => tape.scale(loss, -1.0),
    }
}

/// Mean elementwise absolute difference between two equally shaped
/// variables — the distance `d` shared by the approximation and translator
/// losses.
pub fn feature_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(CmisError::shape(
            "feature distance",
            format!("{} x {}", sa.0, sa.1),
            format!("{} x {}", sb.0, sb.1),
        ));
    }
    let diff = tape.sub(a, b);
    let abs = tape.abs(diff);
    Ok(tape.mean_all(abs))
}

/// Neutral-approximation loss: mean over individuals and over all unordered
/// pairs of their neutral features of the feature distance. Every
/// individual's list must contain at least two equally shaped features.
pub fn loss_neutral_approx(tape: &mut Tape, groups: &[Vec<Var>]) -> Result<Var> {
    if groups.is_empty() {
        return Err(CmisError::config(
            "neutral-approximation loss needs at least one individual",
        ));
    }
    let mut group_means = Vec::with_capacity(groups.len());
    for group in groups {
        if group.len() < 2 {
            return Err(CmisError::config(
                "neutral-approximation loss needs >= 2 features per individual",
            ));
        }
        let mut pair_losses = Vec::new();
        for i in 0..group.len() {
            for j in (i + 1)..group.len() {
                pair_losses.push(feature_distance(tape, group[i], group[j])?);
            }
        }
        group_means.push(mean_scalars(tape, &pair_losses));
    }
    Ok(mean_scalars(tape, &group_means))
}

/// Regression loss: `(1/B) Σ (y − ŷ)²` over two `B x 1` columns.
pub fn loss_mse(tape: &mut Tape, labels: Var, predictions: Var) -> Result<Var> {
    let (sl, sp) = (tape.value(labels).shape(), tape.value(predictions).shape());
    if sl != sp {
        return Err(CmisError::LengthMismatch {
            context: alloc::string::String::from("regression loss"),
            left: sl.0 * sl.1,
            right: sp.0 * sp.1,
        });
    }
    let diff = tape.sub(labels, predictions);
    let sq = tape.mul(diff, diff);
    Ok(tape.mean_all(sq))
}

/// Translator loss: feature distance between the benchmark neutral features
/// and the translator's output. Symmetric in its arguments.
pub fn loss_translator(tape: &mut Tape, benchmark: Var, predicted: Var) -> Result<Var> {
    feature_distance(tape, benchmark, predicted)
}

/// Plain-scalar mean squared error for evaluation code; matches the tape
/// version bit-for-bit up to summation order.
pub fn mse(labels: &[f64], predictions: &[f64]) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(CmisError::LengthMismatch {
            context: alloc::string::String::from("mean squared error"),
            left: labels.len(),
            right: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(CmisError::EmptyInput {
            context: alloc::string::String::from("mean squared error"),
        });
    }
    let sum: f64 = labels
        .iter()
        .zip(predictions)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(sum / labels.len() as f64)
}

fn mean_scalars(tape: &mut Tape, values: &[Var]) -> Var {
    let stacked = tape.stack_rows(values);
    tape.mean_all(stacked)
}
