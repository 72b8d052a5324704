//! Frame-scale encoders, the frame-level translator, and standardization.
//!
//! Everything here is strictly per-frame: encoders apply an MLP plus one
//! gated-attention block row by row, and the translator stacks three of
//! those gated blocks. No operation mixes information across time — the
//! sequence scale is handled by [`crate::transformer`] /
//! [`crate::translator`].
//!
//! The standardizer is plain subtraction: an emotional feature minus the
//! translator's predicted neutral feature for the same individual.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::fmath;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of stacked gated blocks in the frame-level translator.
pub const FLT_BLOCKS: usize = 3;

/// Shape and behavior switches for one gated-attention block.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FltbConfig {
    /// Feature width `D_f` of input and output rows.
    pub feature_width: usize,
    /// Width `D_a` of the q/k/v projections.
    pub attention_width: usize,
    /// Scale the per-frame gate logit `q . k` by `1/sqrt(D_a)` to keep the
    /// sigmoid unsaturated. Disable for the strict unscaled form.
    pub scale_qk: bool,
    /// Apply row layer normalization (with gain/bias) after the residual
    /// sum. Disabling reduces the block to `proj(gate * v) + x`.
    pub layer_norm: bool,
    pub ln_eps: f64,
}

impl FltbConfig {
    pub fn new(feature_width: usize, attention_width: usize) -> Self {
        FltbConfig {
            feature_width,
            attention_width,
            scale_qk: true,
            layer_norm: true,
            ln_eps: 1e-8,
        }
    }
}

/// Parameters of one gated-attention block: the q/k/v projections, the
/// output projection back to feature width, and layer-norm gain/bias.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FltbParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl FltbParams {
    pub fn init(cfg: &FltbConfig, rng: &mut impl RngCore) -> Self {
        let (d, a) = (cfg.feature_width, cfg.attention_width);
        FltbParams {
            w_q: rng::glorot(d, a, rng),
            w_k: rng::glorot(d, a, rng),
            w_v: rng::glorot(d, a, rng),
            w_o: rng::glorot(a, d, rng),
            ln_gain: Tensor::filled(1, d, 1.0),
            ln_bias: Tensor::zeros(1, d),
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("ln_gain", &self.ln_gain),
            ("ln_bias", &self.ln_bias),
        ]
    }

    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("ln_gain", &mut self.ln_gain),
            ("ln_bias", &mut self.ln_bias),
        ]
    }

    /// Binds parameters onto a tape: as gradient-tracked leaves when
    /// trainable, as constants when frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FltbVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        FltbVars {
            w_q: reg(&self.w_q),
            w_k: reg(&self.w_k),
            w_v: reg(&self.w_v),
            w_o: reg(&self.w_o),
            ln_gain: reg(&self.ln_gain),
            ln_bias: reg(&self.ln_bias),
        }
    }
}

/// Tape handles for one block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct FltbVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

/// Output of a gated block, exposing the per-frame gate for inspection.
pub struct FltbOutput {
    pub out: Var,
    /// `T x 1` gate values in (0, 1).
    pub alpha: Var,
}

/// One gated-attention block over `x: T x D_f`.
///
/// Per frame `t`: `q`, `k`, `v` are linear projections of row `t`; the gate
/// is `sigmoid(q . k)` (optionally scaled by `1/sqrt(D_a)`); the gated value
/// is projected back to `D_f` and added residually to the input row, then
/// row-normalized with gain and bias.
pub fn fltb_forward(tape: &mut Tape, x: Var, p: &FltbVars, cfg: &FltbConfig) -> Result<FltbOutput> {
    let shape = tape.value(x).shape();
    if shape.1 != cfg.feature_width {
        return Err(CmisError::shape(
            "gated block input",
            alloc::format!("T x {}", cfg.feature_width),
            alloc::format!("{} x {}", shape.0, shape.1),
        ));
    }
    let q = tape.matmul(x, p.w_q);
    let k = tape.matmul(x, p.w_k);
    let v = tape.matmul(x, p.w_v);
    let qk = tape.mul(q, k);
    let mut logit = tape.row_sum(qk);
    if cfg.scale_qk {
        logit = tape.scale(logit, 1.0 / fmath::sqrt(cfg.attention_width as f64));
    }
    let alpha = tape.sigmoid(logit);
    let gated = tape.mul_col(v, alpha);
    let proj = tape.matmul(gated, p.w_o);
    let residual = tape.add(proj, x);
    let out = if cfg.layer_norm {
        let normed = tape.layer_norm_rows(residual, cfg.ln_eps);
        let scaled = tape.mul_row(normed, p.ln_gain);
        tape.add_row(scaled, p.ln_bias)
    } else {
        residual
    };
    Ok(FltbOutput { out, alpha })
}

/// Parameters of the three-block frame-level translator.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FltParams {
    pub blocks: Vec<FltbParams>,
}

impl FltParams {
    pub fn init(cfg: &FltbConfig, rng: &mut impl RngCore) -> Self {
        FltParams {
            blocks: (0..FLT_BLOCKS).map(|_| FltbParams::init(cfg, rng)).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<FltbVars> {
        self.blocks.iter().map(|b| b.bind(tape, trainable)).collect()
    }
}

/// The frame-level translator: exactly [`FLT_BLOCKS`] gated blocks composed.
pub fn flt_forward(tape: &mut Tape, x: Var, blocks: &[FltbVars], cfg: &FltbConfig) -> Result<Var> {
    assert_eq!(blocks.len(), FLT_BLOCKS, "translator must have {FLT_BLOCKS} blocks");
    let mut cur = x;
    for b in blocks {
        cur = fltb_forward(tape, cur, b, cfg)?.out;
    }
    Ok(cur)
}

/// Shape and behavior switches for a frame-level encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameEncoderConfig {
    /// Input width `H` (motion feature columns).
    pub input_width: usize,
    /// Output feature width `D_f`.
    pub feature_width: usize,
    pub attention_width: usize,
    pub scale_qk: bool,
    pub layer_norm: bool,
    pub ln_eps: f64,
}

impl FrameEncoderConfig {
    pub fn gate_config(&self) -> FltbConfig {
        FltbConfig {
            feature_width: self.feature_width,
            attention_width: self.attention_width,
            scale_qk: self.scale_qk,
            layer_norm: self.layer_norm,
            ln_eps: self.ln_eps,
        }
    }
}

/// Frame-level encoder parameters: a two-layer MLP lifting `H -> D_f`
/// followed by one gated-attention block.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameEncoderParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub gate: FltbParams,
}

impl FrameEncoderParams {
    pub fn init(cfg: &FrameEncoderConfig, rng: &mut impl RngCore) -> Self {
        FrameEncoderParams {
            w1: rng::glorot(cfg.input_width, cfg.feature_width, rng),
            b1: Tensor::zeros(1, cfg.feature_width),
            w2: rng::glorot(cfg.feature_width, cfg.feature_width, rng),
            b2: Tensor::zeros(1, cfg.feature_width),
            gate: FltbParams::init(&cfg.gate_config(), rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FrameEncoderVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        FrameEncoderVars {
            w1: reg(&self.w1),
            b1: reg(&self.b1),
            w2: reg(&self.w2),
            b2: reg(&self.b2),
            gate: self.gate.bind(tape, trainable),
        }
    }
}

/// Tape handles for a frame-level encoder.
#[derive(Clone, Copy, Debug)]
pub struct FrameEncoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub gate: FltbVars,
}

/// Encodes motion rows to frame features: `relu(x W1 + b1)`,
/// `relu(. W2 + b2)`, then one gated-attention block. Strictly per-frame.
pub fn frame_encoder_forward(
    tape: &mut Tape,
    motion: Var,
    p: &FrameEncoderVars,
    cfg: &FrameEncoderConfig,
) -> Result<Var> {
    let shape = tape.value(motion).shape();
    if shape.1 != cfg.input_width {
        return Err(CmisError::shape(
            "frame encoder input",
            alloc::format!("T x {}", cfg.input_width),
            alloc::format!("{} x {}", shape.0, shape.1),
        ));
    }
    let h1 = tape.matmul(motion, p.w1);
    let h1 = tape.add_row(h1, p.b1);
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, p.w2);
    let h2 = tape.add_row(h2, p.b2);
    let h2 = tape.relu(h2);
    Ok(fltb_forward(tape, h2, &p.gate, &cfg.gate_config())?.out)
}

/// Subtraction standardizer: emotional features minus predicted neutral.
pub fn standardize(tape: &mut Tape, v_e: Var, v_hat_n: Var) -> Result<Var> {
    let (a, b) = (tape.value(v_e).shape(), tape.value(v_hat_n).shape());
    if a != b {
        return Err(CmisError::shape(
            "standardize",
            alloc::format!("{} x {}", a.0, a.1),
            alloc::format!("{} x {}", b.0, b.1),
        ));
    }
    Ok(tape.sub(v_e, v_hat_n))
}

/// Arithmetic mean of homogeneous feature tensors (the statistical benchmark
/// over an individual's neutral draws).
pub fn average_features(tape: &mut Tape, vs: &[Var]) -> Result<Var> {
    if vs.is_empty() {
        return Err(CmisError::EmptyInput {
            context: alloc::string::String::from("average_features"),
        });
    }
    let shape = tape.value(vs[0]).shape();
    for &v in &vs[1..] {
        if tape.value(v).shape() != shape {
            return Err(CmisError::shape(
                "average_features",
                alloc::format!("{} x {}", shape.0, shape.1),
                alloc::format!("{} x {}", tape.value(v).shape().0, tape.value(v).shape().1),
            ));
        }
    }
    let mut acc = vs[0];
    for &v in &vs[1..] {
        acc = tape.add(acc, v);
    }
    Ok(tape.scale(acc, 1.0 / vs.len() as f64))
}
