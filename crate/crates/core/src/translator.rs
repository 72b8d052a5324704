//! Sequence-level translators: encoder–decoder recurrences with an
//! attention bridge, plus a single-layer attention variant.
//!
//! The default translator is an encoder LSTM over the emotional sequence,
//! a dot-product attention bridge between the decoder state and all encoder
//! states, and a decoder LSTM whose input at every step is the attention
//! context (no autoregressive feedback). The decoder starts from the
//! encoder's final state. A GRU twin and a one-layer self-attention
//! translator exist for the translator-variant ablation axis.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::fmath;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which sequence translator architecture to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TranslatorVariant {
    EdLstm,
    EdGru,
    Attention,
}

/// Shape switches for the sequence translator.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TranslatorConfig {
    /// Feature width `D_s` of the translated sequence (input and output).
    pub model_width: usize,
    /// Recurrent hidden width `D_h`.
    pub hidden_width: usize,
    pub variant: TranslatorVariant,
}

/// One recurrent cell: input, recurrent, and bias blocks. The gate count is
/// carried by the tensor shapes (`4H` columns for LSTM, `3H` for GRU).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RnnCellParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl RnnCellParams {
    fn init(input: usize, hidden: usize, gates: usize, rng: &mut impl RngCore) -> Self {
        RnnCellParams {
            w: rng::glorot(input, gates * hidden, rng),
            u: rng::glorot(hidden, gates * hidden, rng),
            b: Tensor::zeros(1, gates * hidden),
        }
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> RnnCellVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        RnnCellVars {
            w: reg(&self.w),
            u: reg(&self.u),
            b: reg(&self.b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RnnCellVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Encoder–decoder recurrent translator parameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdRnnParams {
    pub enc: RnnCellParams,
    pub dec: RnnCellParams,
    /// Projects decoder hidden states back to `D_s`.
    pub out_map: Tensor,
    pub out_bias: Tensor,
}

/// Single-layer self-attention translator parameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttnTranslatorParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

/// Sequence-translator parameters, one variant active per model.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SltParams {
    EdLstm(EdRnnParams),
    EdGru(EdRnnParams),
    Attention(AttnTranslatorParams),
}

impl SltParams {
    pub fn init(cfg: &TranslatorConfig, rng: &mut impl RngCore) -> Self {
        let (d, h) = (cfg.model_width, cfg.hidden_width);
        match cfg.variant {
            TranslatorVariant::EdLstm => SltParams::EdLstm(EdRnnParams {
                enc: RnnCellParams::init(d, h, 4, rng),
                dec: RnnCellParams::init(h, h, 4, rng),
                out_map: rng::glorot(h, d, rng),
                out_bias: Tensor::zeros(1, d),
            }),
            TranslatorVariant::EdGru => SltParams::EdGru(EdRnnParams {
                enc: RnnCellParams::init(d, h, 3, rng),
                dec: RnnCellParams::init(h, h, 3, rng),
                out_map: rng::glorot(h, d, rng),
                out_bias: Tensor::zeros(1, d),
            }),
            TranslatorVariant::Attention => SltParams::Attention(AttnTranslatorParams {
                w_q: rng::glorot(d, d, rng),
                w_k: rng::glorot(d, d, rng),
                w_v: rng::glorot(d, d, rng),
                w_o: rng::glorot(d, d, rng),
                b_o: Tensor::zeros(1, d),
            }),
        }
    }

    pub fn variant(&self) -> TranslatorVariant {
        match self {
            SltParams::EdLstm(_) => TranslatorVariant::EdLstm,
            SltParams::EdGru(_) => TranslatorVariant::EdGru,
            SltParams::Attention(_) => TranslatorVariant::Attention,
        }
    }

    pub fn entries(&self) -> Vec<(String, &Tensor)> {
        match self {
            SltParams::EdLstm(p) | SltParams::EdGru(p) => vec![
                (String::from("enc.w"), &p.enc.w),
                (String::from("enc.u"), &p.enc.u),
                (String::from("enc.b"), &p.enc.b),
                (String::from("dec.w"), &p.dec.w),
                (String::from("dec.u"), &p.dec.u),
                (String::from("dec.b"), &p.dec.b),
                (String::from("out_map"), &p.out_map),
                (String::from("out_bias"), &p.out_bias),
            ],
            SltParams::Attention(p) => vec![
                (String::from("w_q"), &p.w_q),
                (String::from("w_k"), &p.w_k),
                (String::from("w_v"), &p.w_v),
                (String::from("w_o"), &p.w_o),
                (String::from("b_o"), &p.b_o),
            ],
        }
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            SltParams::EdLstm(p) | SltParams::EdGru(p) => vec![
                (String::from("enc.w"), &mut p.enc.w),
                (String::from("enc.u"), &mut p.enc.u),
                (String::from("enc.b"), &mut p.enc.b),
                (String::from("dec.w"), &mut p.dec.w),
                (String::from("dec.u"), &mut p.dec.u),
                (String::from("dec.b"), &mut p.dec.b),
                (String::from("out_map"), &mut p.out_map),
                (String::from("out_bias"), &mut p.out_bias),
            ],
            SltParams::Attention(p) => vec![
                (String::from("w_q"), &mut p.w_q),
                (String::from("w_k"), &mut p.w_k),
                (String::from("w_v"), &mut p.w_v),
                (String::from("w_o"), &mut p.w_o),
                (String::from("b_o"), &mut p.b_o),
            ],
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> SltVars {
        let reg = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        match self {
            SltParams::EdLstm(p) => SltVars::EdLstm(EdRnnVars {
                enc: p.enc.bind(tape, trainable),
                dec: p.dec.bind(tape, trainable),
                out_map: reg(tape, &p.out_map),
                out_bias: reg(tape, &p.out_bias),
            }),
            SltParams::EdGru(p) => SltVars::EdGru(EdRnnVars {
                enc: p.enc.bind(tape, trainable),
                dec: p.dec.bind(tape, trainable),
                out_map: reg(tape, &p.out_map),
                out_bias: reg(tape, &p.out_bias),
            }),
            SltParams::Attention(p) => SltVars::Attention(AttnTranslatorVars {
                w_q: reg(tape, &p.w_q),
                w_k: reg(tape, &p.w_k),
                w_v: reg(tape, &p.w_v),
                w_o: reg(tape, &p.w_o),
                b_o: reg(tape, &p.b_o),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EdRnnVars {
    pub enc: RnnCellVars,
    pub dec: RnnCellVars,
    pub out_map: Var,
    pub out_bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnTranslatorVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub b_o: Var,
}

#[derive(Clone, Copy, Debug)]
pub enum SltVars {
    EdLstm(EdRnnVars),
    EdGru(EdRnnVars),
    Attention(AttnTranslatorVars),
}

/// One LSTM step. Gate layout along the `4H` axis: input, forget, cell,
/// output. Returns `(h, c)`.
fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    p: &RnnCellVars,
    hidden: usize,
) -> (Var, Var) {
    let zx = tape.matmul(x, p.w);
    let zh = tape.matmul(h, p.u);
    let z = tape.add(zx, zh);
    let z = tape.add(z, p.b);
    let i = tape.slice_cols(z, 0, hidden);
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(z, hidden, 2 * hidden);
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(z, 2 * hidden, 3 * hidden);
    let g = tape.tanh(g);
    let o = tape.slice_cols(z, 3 * hidden, 4 * hidden);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_new = tape.add(fc, ig);
    let ct = tape.tanh(c_new);
    let h_new = tape.mul(o, ct);
    (h_new, c_new)
}

/// One GRU step. Gate layout along the `3H` axis: reset, update, candidate.
/// Candidate uses the single-bias form `tanh(x W_n + r * (h U_n) + b_n)`.
fn gru_step(tape: &mut Tape, x: Var, h: Var, p: &RnnCellVars, hidden: usize) -> Var {
    let zx = tape.matmul(x, p.w);
    let zh = tape.matmul(h, p.u);

    let rx = tape.slice_cols(zx, 0, hidden);
    let rh = tape.slice_cols(zh, 0, hidden);
    let rb = tape.slice_cols(p.b, 0, hidden);
    let r = tape.add(rx, rh);
    let r = tape.add(r, rb);
    let r = tape.sigmoid(r);

    let ux = tape.slice_cols(zx, hidden, 2 * hidden);
    let uh = tape.slice_cols(zh, hidden, 2 * hidden);
    let ub = tape.slice_cols(p.b, hidden, 2 * hidden);
    let u = tape.add(ux, uh);
    let u = tape.add(u, ub);
    let u = tape.sigmoid(u);

    let nx = tape.slice_cols(zx, 2 * hidden, 3 * hidden);
    let nh = tape.slice_cols(zh, 2 * hidden, 3 * hidden);
    let nb = tape.slice_cols(p.b, 2 * hidden, 3 * hidden);
    let gated = tape.mul(r, nh);
    let n = tape.add(nx, gated);
    let n = tape.add(n, nb);
    let n = tape.tanh(n);

    // h' = (1 - u) * n + u * h
    let ones = tape.constant(Tensor::filled(1, hidden, 1.0));
    let inv = tape.sub(ones, u);
    let a = tape.mul(inv, n);
    let b = tape.mul(u, h);
    tape.add(a, b)
}

/// Dot-product attention bridge: scores one query row against all encoder
/// states and returns the convex combination plus the weights (`1 x T`).
pub fn attention_bridge(tape: &mut Tape, query: Var, states: Var) -> (Var, Var) {
    let st = tape.transpose(states);
    let scores = tape.matmul(query, st);
    let weights = tape.softmax_rows(scores);
    let ctx = tape.matmul(weights, states);
    (ctx, weights)
}

fn ed_rnn_forward(
    tape: &mut Tape,
    x: Var,
    p: &EdRnnVars,
    cfg: &TranslatorConfig,
    lstm: bool,
) -> Var {
    let t_len = tape.value(x).rows();
    let hidden = cfg.hidden_width;
    let zero = tape.constant(Tensor::zeros(1, hidden));

    // Encoder pass, collecting hidden states.
    let mut h = zero;
    let mut c = zero;
    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let xt = tape.row(x, t);
        if lstm {
            let (h2, c2) = lstm_step(tape, xt, h, c, &p.enc, hidden);
            h = h2;
            c = c2;
        } else {
            h = gru_step(tape, xt, h, &p.enc, hidden);
        }
        states.push(h);
    }
    let enc_states = tape.stack_rows(&states);

    // Decoder starts from the encoder's final state; each step consumes the
    // attention context of its previous hidden state.
    let mut dh = h;
    let mut dc = c;
    let mut outputs = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let (ctx, _) = attention_bridge(tape, dh, enc_states);
        if lstm {
            let (h2, c2) = lstm_step(tape, ctx, dh, dc, &p.dec, hidden);
            dh = h2;
            dc = c2;
        } else {
            dh = gru_step(tape, ctx, dh, &p.dec, hidden);
        }
        let y = tape.matmul(dh, p.out_map);
        let y = tape.add(y, p.out_bias);
        outputs.push(y);
    }
    tape.stack_rows(&outputs)
}

fn attention_translator_forward(tape: &mut Tape, x: Var, p: &AttnTranslatorVars) -> Var {
    let d = tape.value(x).cols();
    let q = tape.matmul(x, p.w_q);
    let k = tape.matmul(x, p.w_k);
    let v = tape.matmul(x, p.w_v);
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let scores = tape.scale(scores, 1.0 / fmath::sqrt(d as f64));
    let weights = tape.softmax_rows(scores);
    let ctx = tape.matmul(weights, v);
    let out = tape.matmul(ctx, p.w_o);
    tape.add_row(out, p.b_o)
}

/// Translates an emotional sequence into a predicted neutral sequence of the
/// same shape.
pub fn slt_forward(tape: &mut Tape, x: Var, p: &SltVars, cfg: &TranslatorConfig) -> Result<Var> {
    let shape = tape.value(x).shape();
    if shape.1 != cfg.model_width {
        return Err(CmisError::shape(
            "sequence translator input",
            format!("T x {}", cfg.model_width),
            format!("{} x {}", shape.0, shape.1),
        ));
    }
    Ok(match p {
        SltVars::EdLstm(p) => ed_rnn_forward(tape, x, p, cfg, true),
        SltVars::EdGru(p) => ed_rnn_forward(tape, x, p, cfg, false),
        SltVars::Attention(p) => attention_translator_forward(tape, x, p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn cfg(variant: TranslatorVariant) -> TranslatorConfig {
        TranslatorConfig {
            model_width: 3,
            hidden_width: 2,
            variant,
        }
    }

    fn init(variant: TranslatorVariant, seed: u64) -> SltParams {
        SltParams::init(&cfg(variant), &mut rng::stream(seed, &[rng::label::PARAM_INIT]))
    }

    fn forward(p: &SltParams, c: &TranslatorConfig, x: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = p.bind(&mut tape, true);
        let out = slt_forward(&mut tape, xv, &vars, c).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn all_variants_preserve_shape() {
        let x = Tensor::from_rows(&[&[0.4, -0.9, 1.2], &[0.1, 0.6, -0.5], &[-0.8, 0.2, 0.9]]);
        for variant in [
            TranslatorVariant::EdLstm,
            TranslatorVariant::EdGru,
            TranslatorVariant::Attention,
        ] {
            let c = cfg(variant);
            let p = init(variant, 1);
            let out = forward(&p, &c, x.clone());
            assert_eq!(out.shape(), x.shape(), "{variant:?}");
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let c = cfg(TranslatorVariant::EdLstm);
        let p = init(TranslatorVariant::EdLstm, 2);
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::zeros(3, 5));
        let vars = p.bind(&mut tape, true);
        assert!(slt_forward(&mut tape, xv, &vars, &c).is_err());
    }

    #[test]
    fn attention_bridge_weights_are_convex() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::from_rows(&[&[0.3, -1.2]]));
        let states = tape.constant(Tensor::from_rows(&[
            &[0.5, 0.1],
            &[-0.4, 0.9],
            &[1.3, -0.7],
        ]));
        let (_, weights) = attention_bridge(&mut tape, q, states);
        let w = tape.value(weights);
        let sum: f64 = w.row_slice(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(w.row_slice(0).iter().all(|&x| x > 0.0));
    }

    #[test]
    fn attention_over_identical_states_returns_that_state() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::from_rows(&[&[2.0, -3.0]]));
        let state = [0.7, -0.2];
        let states = tape.constant(Tensor::from_rows(&[&state, &state, &state, &state]));
        let (ctx, _) = attention_bridge(&mut tape, q, states);
        for (c, &s) in state.iter().enumerate() {
            assert!((tape.value(ctx).get(0, c) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_translator_matches_scalar_unrolled_oracle() {
        // T=3, D_s=3, H=2, hand-unrolled with plain f64 loops.
        let c = cfg(TranslatorVariant::EdLstm);
        let p = init(TranslatorVariant::EdLstm, 3);
        let x = Tensor::from_rows(&[&[0.4, -0.9, 1.2], &[0.1, 0.6, -0.5], &[-0.8, 0.2, 0.9]]);
        let got = forward(&p, &c, x.clone());

        let (enc, dec, out_map, out_bias) = match &p {
            SltParams::EdLstm(p) => (&p.enc, &p.dec, &p.out_map, &p.out_bias),
            _ => unreachable!(),
        };
        let sig = |v: f64| 1.0 / (1.0 + fmath::exp(-v));
        let h_w = 2usize;
        // One scalar LSTM step: returns (h, c).
        let step = |cell: &RnnCellParams,
                    x_row: &[f64],
                    h: &[f64; 2],
                    cc: &[f64; 2]|
         -> ([f64; 2], [f64; 2]) {
            let mut z = [0.0; 8];
            for (g, zg) in z.iter_mut().enumerate() {
                let mut acc = cell.b.get(0, g);
                for (i, &xi) in x_row.iter().enumerate() {
                    acc += xi * cell.w.get(i, g);
                }
                for (i, &hi) in h.iter().enumerate() {
                    acc += hi * cell.u.get(i, g);
                }
                *zg = acc;
            }
            let mut h2 = [0.0; 2];
            let mut c2 = [0.0; 2];
            for j in 0..h_w {
                let i_g = sig(z[j]);
                let f_g = sig(z[h_w + j]);
                let g_g = fmath::tanh(z[2 * h_w + j]);
                let o_g = sig(z[3 * h_w + j]);
                c2[j] = f_g * cc[j] + i_g * g_g;
                h2[j] = o_g * fmath::tanh(c2[j]);
            }
            (h2, c2)
        };

        let mut h = [0.0; 2];
        let mut cc = [0.0; 2];
        let mut states = Vec::new();
        for t in 0..3 {
            let (h2, c2) = step(enc, x.row_slice(t), &h, &cc);
            h = h2;
            cc = c2;
            states.push(h);
        }
        let mut dh = h;
        let mut dc = cc;
        for t in 0..3 {
            // Attention bridge.
            let scores: Vec<f64> = states
                .iter()
                .map(|s| s.iter().zip(&dh).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = scores.iter().map(|&s| fmath::exp(s - max)).collect();
            let denom: f64 = exps.iter().sum();
            let mut ctx = [0.0; 2];
            for (w, s) in exps.iter().zip(&states) {
                for j in 0..2 {
                    ctx[j] += w / denom * s[j];
                }
            }
            let (h2, c2) = step(dec, &ctx, &dh, &dc);
            dh = h2;
            dc = c2;
            for col in 0..3 {
                let want: f64 = (0..2).map(|j| dh[j] * out_map.get(j, col)).sum::<f64>()
                    + out_bias.get(0, col);
                assert!(
                    (got.get(t, col) - want).abs() < 1e-12,
                    "t={t} col={col}: {} vs {want}",
                    got.get(t, col)
                );
            }
        }
    }

    #[test]
    fn gru_translator_matches_scalar_unrolled_oracle() {
        let c = cfg(TranslatorVariant::EdGru);
        let p = init(TranslatorVariant::EdGru, 4);
        let x = Tensor::from_rows(&[&[0.4, -0.9, 1.2], &[0.1, 0.6, -0.5]]);
        let got = forward(&p, &c, x.clone());

        let (enc, dec, out_map, out_bias) = match &p {
            SltParams::EdGru(p) => (&p.enc, &p.dec, &p.out_map, &p.out_bias),
            _ => unreachable!(),
        };
        let sig = |v: f64| 1.0 / (1.0 + fmath::exp(-v));
        let h_w = 2usize;
        let step = |cell: &RnnCellParams, x_row: &[f64], h: &[f64; 2]| -> [f64; 2] {
            let lin = |m: &Tensor, v: &[f64], g: usize| -> f64 {
                v.iter().enumerate().map(|(i, &vi)| vi * m.get(i, g)).sum()
            };
            let mut h2 = [0.0; 2];
            for j in 0..h_w {
                let r = sig(lin(&cell.w, x_row, j) + lin(&cell.u, h, j) + cell.b.get(0, j));
                let u = sig(
                    lin(&cell.w, x_row, h_w + j)
                        + lin(&cell.u, h, h_w + j)
                        + cell.b.get(0, h_w + j),
                );
                let n = fmath::tanh(
                    lin(&cell.w, x_row, 2 * h_w + j)
                        + r * lin(&cell.u, h, 2 * h_w + j)
                        + cell.b.get(0, 2 * h_w + j),
                );
                h2[j] = (1.0 - u) * n + u * h[j];
            }
            h2
        };

        let mut h = [0.0; 2];
        let mut states = Vec::new();
        for t in 0..2 {
            h = step(enc, x.row_slice(t), &h);
            states.push(h);
        }
        let mut dh = h;
        for t in 0..2 {
            let scores: Vec<f64> = states
                .iter()
                .map(|s| s.iter().zip(&dh).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = scores.iter().map(|&s| fmath::exp(s - max)).collect();
            let denom: f64 = exps.iter().sum();
            let mut ctx = [0.0; 2];
            for (w, s) in exps.iter().zip(&states) {
                for j in 0..2 {
                    ctx[j] += w / denom * s[j];
                }
            }
            dh = step(dec, &ctx, &dh);
            for col in 0..3 {
                let want: f64 = (0..2).map(|j| dh[j] * out_map.get(j, col)).sum::<f64>()
                    + out_bias.get(0, col);
                assert!((got.get(t, col) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ed_lstm_gradients_match_finite_differences() {
        let c = TranslatorConfig {
            model_width: 4,
            hidden_width: 3,
            variant: TranslatorVariant::EdLstm,
        };
        let p = SltParams::init(&c, &mut rng::stream(5, &[0]));
        let x = Tensor::from_rows(&[
            &[0.4, -0.9, 1.2, 0.3],
            &[0.1, 0.6, -0.5, -0.2],
            &[-0.8, 0.2, 0.9, 0.7],
        ]);
        let (enc, dec, out_map, out_bias) = match &p {
            SltParams::EdLstm(p) => (&p.enc, &p.dec, &p.out_map, &p.out_bias),
            _ => unreachable!(),
        };
        let tensors = vec![
            enc.w.clone(),
            enc.u.clone(),
            enc.b.clone(),
            dec.w.clone(),
            dec.u.clone(),
            dec.b.clone(),
            out_map.clone(),
            out_bias.clone(),
            x,
        ];
        let err = gradcheck::max_param_gradient_error(&tensors, 1e-5, |tape, vars| {
            let p = EdRnnVars {
                enc: RnnCellVars {
                    w: vars[0],
                    u: vars[1],
                    b: vars[2],
                },
                dec: RnnCellVars {
                    w: vars[3],
                    u: vars[4],
                    b: vars[5],
                },
                out_map: vars[6],
                out_bias: vars[7],
            };
            let out = slt_forward(tape, vars[8], &SltVars::EdLstm(p), &c).unwrap();
            let sq = tape.mul(out, out);
            tape.mean_all(sq)
        });
        assert!(err < 1e-6, "max relative gradient error {err}");
    }

    #[test]
    fn ed_gru_and_attention_gradients_match_finite_differences() {
        let c = TranslatorConfig {
            model_width: 3,
            hidden_width: 2,
            variant: TranslatorVariant::EdGru,
        };
        let p = SltParams::init(&c, &mut rng::stream(6, &[0]));
        let x = Tensor::from_rows(&[&[0.4, -0.9, 1.2], &[0.1, 0.6, -0.5]]);
        let (enc, dec, out_map, out_bias) = match &p {
            SltParams::EdGru(p) => (&p.enc, &p.dec, &p.out_map, &p.out_bias),
            _ => unreachable!(),
        };
        let tensors = vec![
            enc.w.clone(),
            enc.u.clone(),
            enc.b.clone(),
            dec.w.clone(),
            dec.u.clone(),
            dec.b.clone(),
            out_map.clone(),
            out_bias.clone(),
            x.clone(),
        ];
        let err = gradcheck::max_param_gradient_error(&tensors, 1e-5, |tape, vars| {
            let p = EdRnnVars {
                enc: RnnCellVars {
                    w: vars[0],
                    u: vars[1],
                    b: vars[2],
                },
                dec: RnnCellVars {
                    w: vars[3],
                    u: vars[4],
                    b: vars[5],
                },
                out_map: vars[6],
                out_bias: vars[7],
            };
            let out = slt_forward(tape, vars[8], &SltVars::EdGru(p), &c).unwrap();
            let sq = tape.mul(out, out);
            tape.mean_all(sq)
        });
        assert!(err < 1e-6, "gru: max relative gradient error {err}");

        let ca = TranslatorConfig {
            variant: TranslatorVariant::Attention,
            ..c
        };
        let pa = SltParams::init(&ca, &mut rng::stream(7, &[0]));
        let at = match &pa {
            SltParams::Attention(p) => p.clone(),
            _ => unreachable!(),
        };
        let tensors = vec![
            at.w_q.clone(),
            at.w_k.clone(),
            at.w_v.clone(),
            at.w_o.clone(),
            at.b_o.clone(),
            x,
        ];
        let err = gradcheck::max_param_gradient_error(&tensors, 1e-5, |tape, vars| {
            let p = AttnTranslatorVars {
                w_q: vars[0],
                w_k: vars[1],
                w_v: vars[2],
                w_o: vars[3],
                b_o: vars[4],
            };
            let out = slt_forward(tape, vars[5], &SltVars::Attention(p), &ca).unwrap();
            let sq = tape.mul(out, out);
            tape.mean_all(sq)
        });
        assert!(err < 1e-6, "attention: max relative gradient error {err}");
    }
}
