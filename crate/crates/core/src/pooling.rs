//! Temporal attention pooling, global average pooling, and the MLP
//! regression heads that map pooled features to an agreement score.
//!
//! Attention pooling scores each frame with `sigmoid(w · tanh(W v_t))`,
//! scales the frame by its score, and averages over time. A flag drops the
//! inner `tanh`, reducing the scorer to a bare linear-sigmoid form; a test
//! hook overrides the scores entirely so pooling degeneracies can be pinned
//! against the unweighted mean.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Shape and scorer switches for temporal attention pooling.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TapConfig {
    /// Feature width `D_s` of the pooled sequence.
    pub feature_width: usize,
    /// Hidden width of the frame scorer.
    pub attention_width: usize,
    /// Keep the nonlinear activation inside the scorer. Disabling reduces
    /// the score to `sigmoid(W v_t · w)`.
    pub tanh: bool,
}

impl TapConfig {
    pub fn new(feature_width: usize, attention_width: usize) -> Self {
        TapConfig {
            feature_width,
            attention_width,
            tanh: true,
        }
    }
}

/// Parameters of the attention scorer: a frame projection and a scoring
/// vector.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TapParams {
    /// `D_s x A` frame projection.
    pub w_proj: Tensor,
    /// `A x 1` scoring vector.
    pub w_score: Tensor,
}

impl TapParams {
    pub fn init(cfg: &TapConfig, rng: &mut impl RngCore) -> Self {
        TapParams {
            w_proj: rng::glorot(cfg.feature_width, cfg.attention_width, rng),
            w_score: rng::glorot(cfg.attention_width, 1, rng),
        }
    }

    pub fn entries(&self) -> Vec<(String, &Tensor)> {
        alloc::vec![
            (String::from("w_proj"), &self.w_proj),
            (String::from("w_score"), &self.w_score),
        ]
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        alloc::vec![
            (String::from("w_proj"), &mut self.w_proj),
            (String::from("w_score"), &mut self.w_score),
        ]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> TapVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        TapVars {
            w_proj: reg(&self.w_proj),
            w_score: reg(&self.w_score),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TapVars {
    pub w_proj: Var,
    pub w_score: Var,
}

/// Pooled feature plus the per-frame attention scores that produced it.
#[derive(Clone, Copy, Debug)]
pub struct TapOutput {
    /// `1 x D_s` pooled feature.
    pub z: Var,
    /// `T x 1` frame scores.
    pub alpha: Var,
}

/// Attention pooling with an optional score override (`T x 1`) used by
/// degeneracy tests; `None` computes the scores from the parameters.
pub fn tap_forward_with(
    tape: &mut Tape,
    v: Var,
    p: &TapVars,
    cfg: &TapConfig,
    alpha_override: Option<Var>,
) -> Result<TapOutput> {
    let (t_len, width) = tape.value(v).shape();
    if width != cfg.feature_width {
        return Err(CmisError::shape(
            "attention pooling input",
            format!("T x {}", cfg.feature_width),
            format!("{t_len} x {width}"),
        ));
    }
    let alpha = match alpha_override {
        Some(a) => {
            let shape = tape.value(a).shape();
            if shape != (t_len, 1) {
                return Err(CmisError::shape(
                    "attention score override",
                    format!("{t_len} x 1"),
                    format!("{} x {}", shape.0, shape.1),
                ));
            }
            a
        }
        None => {
            let hidden = tape.matmul(v, p.w_proj);
            let hidden = if cfg.tanh { tape.tanh(hidden) } else { hidden };
            let scores = tape.matmul(hidden, p.w_score);
            tape.sigmoid(scores)
        }
    };
    let weighted = tape.mul_col(v, alpha);
    let z = tape.mean_rows(weighted);
    Ok(TapOutput { z, alpha })
}

/// Attention pooling: `z = (1/T) Σ_t sigmoid(w · tanh(W v_t)) · v_t`.
pub fn tap_forward(tape: &mut Tape, v: Var, p: &TapVars, cfg: &TapConfig) -> Result<TapOutput> {
    tap_forward_with(tape, v, p, cfg, None)
}

/// Unweighted mean over frames: `z = (1/T) Σ_t v_t`.
pub fn global_pool(tape: &mut Tape, v: Var) -> Result<Var> {
    if tape.value(v).rows() == 0 {
        return Err(CmisError::EmptyInput {
            context: "global pooling".to_string(),
        });
    }
    Ok(tape.mean_rows(v))
}

/// Width switches for a regression head: `layers` hidden relu layers of
/// `hidden_width` units followed by a linear map to one output.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadConfig {
    pub input_width: usize,
    pub hidden_width: usize,
    pub layers: usize,
}

impl HeadConfig {
    pub fn new(input_width: usize) -> Self {
        HeadConfig {
            input_width,
            hidden_width: 64,
            layers: 2,
        }
    }
}

/// Parameters of an MLP regression head.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadParams {
    /// `(weight, bias)` per hidden layer.
    pub hidden: Vec<(Tensor, Tensor)>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl HeadParams {
    pub fn init(cfg: &HeadConfig, rng: &mut impl RngCore) -> Self {
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut width = cfg.input_width;
        for _ in 0..cfg.layers {
            hidden.push((
                rng::glorot(width, cfg.hidden_width, rng),
                Tensor::zeros(1, cfg.hidden_width),
            ));
            width = cfg.hidden_width;
        }
        HeadParams {
            hidden,
            out_w: rng::glorot(width, 1, rng),
            out_b: Tensor::zeros(1, 1),
        }
    }

    pub fn entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{i}.w"), w));
            out.push((format!("hidden{i}.b"), b));
        }
        out.push((String::from("out.w"), &self.out_w));
        out.push((String::from("out.b"), &self.out_b));
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.hidden.iter_mut().enumerate() {
            out.push((format!("hidden{i}.w"), &mut *w));
            out.push((format!("hidden{i}.b"), &mut *b));
        }
        out.push((String::from("out.w"), &mut self.out_w));
        out.push((String::from("out.b"), &mut self.out_b));
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> HeadVars {
        let reg = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        HeadVars {
            hidden: self
                .hidden
                .iter()
                .map(|(w, b)| (reg(tape, w), reg(tape, b)))
                .collect(),
            out_w: reg(tape, &self.out_w),
            out_b: reg(tape, &self.out_b),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub hidden: Vec<(Var, Var)>,
    pub out_w: Var,
    pub out_b: Var,
}

/// Maps a batch of pooled features (`B x input_width`) to `B x 1` predicted
/// agreement scores. Outputs are unconstrained reals; clamping to the label
/// range is a reporting decision left to evaluation code.
pub fn regress(tape: &mut Tape, z: Var, p: &HeadVars, cfg: &HeadConfig) -> Result<Var> {
    let (batch, width) = tape.value(z).shape();
    if width != cfg.input_width {
        return Err(CmisError::shape(
            "regression head input",
            format!("B x {}", cfg.input_width),
            format!("{batch} x {width}"),
        ));
    }
    let mut h = z;
    for (w, b) in &p.hidden {
        let lin = tape.matmul(h, *w);
        let lin = tape.add_row(lin, *b);
        h = tape.relu(lin);
    }
    let out = tape.matmul(h, p.out_w);
    Ok(tape.add_row(out, p.out_b))
}
