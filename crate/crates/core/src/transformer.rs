//! Sequence-level encoders: a Transformer encoder over frame features.
//!
//! Both sequence-level encoders (neutral and emotional) share this backbone:
//! an input projection to the model width, optional sinusoidal positional
//! encoding, then a stack of post-norm self-attention layers (multi-head
//! scaled dot-product attention + position-wise feedforward, each wrapped in
//! a residual connection and row layer normalization).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::fmath;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Shape switches for a sequence-level encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransformerConfig {
    /// Width of incoming rows (frame-feature width, or raw motion width in
    /// single-scale configurations).
    pub input_width: usize,
    /// Model width `D_s`.
    pub model_width: usize,
    /// Position-wise feedforward width.
    pub ff_width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Add sinusoidal positional encodings after the input projection.
    pub positional: bool,
    pub ln_eps: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 {
            return Err(CmisError::config("transformer needs >= 1 layer and head"));
        }
        if !self.model_width.is_multiple_of(self.heads) {
            return Err(CmisError::config(format!(
                "model width {} not divisible by {} heads",
                self.model_width, self.heads
            )));
        }
        Ok(())
    }

    fn head_width(&self) -> usize {
        self.model_width / self.heads
    }
}

/// Parameters of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransformerLayerParams {
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_f1: Tensor,
    pub b_f1: Tensor,
    pub w_f2: Tensor,
    pub b_f2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl TransformerLayerParams {
    fn init(cfg: &TransformerConfig, rng: &mut impl RngCore) -> Self {
        let d = cfg.model_width;
        let f = cfg.ff_width;
        TransformerLayerParams {
            w_q: rng::glorot(d, d, rng),
            b_q: Tensor::zeros(1, d),
            w_k: rng::glorot(d, d, rng),
            b_k: Tensor::zeros(1, d),
            w_v: rng::glorot(d, d, rng),
            b_v: Tensor::zeros(1, d),
            w_o: rng::glorot(d, d, rng),
            b_o: Tensor::zeros(1, d),
            ln1_gain: Tensor::filled(1, d, 1.0),
            ln1_bias: Tensor::zeros(1, d),
            w_f1: rng::glorot(d, f, rng),
            b_f1: Tensor::zeros(1, f),
            w_f2: rng::glorot(f, d, rng),
            b_f2: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, 1.0),
            ln2_bias: Tensor::zeros(1, d),
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("b_k", &self.b_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w_f1", &self.w_f1),
            ("b_f1", &self.b_f1),
            ("w_f2", &self.w_f2),
            ("b_f2", &self.b_f2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_k", &mut self.w_k),
            ("b_k", &mut self.b_k),
            ("w_v", &mut self.w_v),
            ("b_v", &mut self.b_v),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("w_f1", &mut self.w_f1),
            ("b_f1", &mut self.b_f1),
            ("w_f2", &mut self.w_f2),
            ("b_f2", &mut self.b_f2),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> TransformerLayerVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        TransformerLayerVars {
            w_q: reg(&self.w_q),
            b_q: reg(&self.b_q),
            w_k: reg(&self.w_k),
            b_k: reg(&self.b_k),
            w_v: reg(&self.w_v),
            b_v: reg(&self.b_v),
            w_o: reg(&self.w_o),
            b_o: reg(&self.b_o),
            ln1_gain: reg(&self.ln1_gain),
            ln1_bias: reg(&self.ln1_bias),
            w_f1: reg(&self.w_f1),
            b_f1: reg(&self.b_f1),
            w_f2: reg(&self.w_f2),
            b_f2: reg(&self.b_f2),
            ln2_gain: reg(&self.ln2_gain),
            ln2_bias: reg(&self.ln2_bias),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TransformerLayerVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w_f1: Var,
    pub b_f1: Var,
    pub w_f2: Var,
    pub b_f2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

/// Full encoder parameters: input projection plus layer stack.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransformerParams {
    pub input_map: Tensor,
    pub input_bias: Tensor,
    pub layers: Vec<TransformerLayerParams>,
}

impl TransformerParams {
    pub fn init(cfg: &TransformerConfig, rng: &mut impl RngCore) -> Self {
        cfg.validate().expect("invalid transformer config");
        TransformerParams {
            input_map: rng::glorot(cfg.input_width, cfg.model_width, rng),
            input_bias: Tensor::zeros(1, cfg.model_width),
            layers: (0..cfg.layers)
                .map(|_| TransformerLayerParams::init(cfg, rng))
                .collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> TransformerVars {
        let input_map = if trainable {
            tape.leaf(self.input_map.clone())
        } else {
            tape.constant(self.input_map.clone())
        };
        let input_bias = if trainable {
            tape.leaf(self.input_bias.clone())
        } else {
            tape.constant(self.input_bias.clone())
        };
        TransformerVars {
            input_map,
            input_bias,
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformerVars {
    pub input_map: Var,
    pub input_bias: Var,
    pub layers: Vec<TransformerLayerVars>,
}

/// Sinusoidal positional encoding table for `t_len` steps of width `d`.
pub fn positional_encoding(t_len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(t_len, d);
    for t in 0..t_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let rate = fmath::powf(10000.0, exponent);
            let angle = t as f64 / rate;
            let v = if i % 2 == 0 {
                fmath::sin(angle)
            } else {
                fmath::cos(angle)
            };
            pe.set(t, i, v);
        }
    }
    pe
}

fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
    let normed = tape.layer_norm_rows(x, eps);
    let scaled = tape.mul_row(normed, gain);
    tape.add_row(scaled, bias)
}

fn self_attention(
    tape: &mut Tape,
    x: Var,
    layer: &TransformerLayerVars,
    cfg: &TransformerConfig,
) -> Var {
    let q = tape.matmul(x, layer.w_q);
    let q = tape.add_row(q, layer.b_q);
    let k = tape.matmul(x, layer.w_k);
    let k = tape.add_row(k, layer.b_k);
    let v = tape.matmul(x, layer.w_v);
    let v = tape.add_row(v, layer.b_v);

    let dh = cfg.head_width();
    let scale = 1.0 / fmath::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        heads.push(tape.matmul(weights, vh));
    }
    let ctx = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)
    };
    let out = tape.matmul(ctx, layer.w_o);
    tape.add_row(out, layer.b_o)
}

/// Runs the encoder over `x: T x input_width`, producing `T x D_s`.
pub fn transformer_forward(
    tape: &mut Tape,
    x: Var,
    p: &TransformerVars,
    cfg: &TransformerConfig,
) -> Result<Var> {
    let shape = tape.value(x).shape();
    if shape.1 != cfg.input_width {
        return Err(CmisError::shape(
            "sequence encoder input",
            format!("T x {}", cfg.input_width),
            format!("{} x {}", shape.0, shape.1),
        ));
    }
    let mut cur = tape.matmul(x, p.input_map);
    cur = tape.add_row(cur, p.input_bias);
    if cfg.positional {
        let pe = positional_encoding(shape.0, cfg.model_width);
        let pe = tape.constant(pe);
        cur = tape.add(cur, pe);
    }
    for layer in &p.layers {
        let attn = self_attention(tape, cur, layer, cfg);
        let res1 = tape.add(cur, attn);
        let normed1 = layer_norm(tape, res1, layer.ln1_gain, layer.ln1_bias, cfg.ln_eps);
        let f1 = tape.matmul(normed1, layer.w_f1);
        let f1 = tape.add_row(f1, layer.b_f1);
        let f1 = tape.relu(f1);
        let f2 = tape.matmul(f1, layer.w_f2);
        let f2 = tape.add_row(f2, layer.b_f2);
        let res2 = tape.add(normed1, f2);
        cur = layer_norm(tape, res2, layer.ln2_gain, layer.ln2_bias, cfg.ln_eps);
    }
    Ok(cur)
}
