//! Whole-model assembly: configuration, parameter state, module freezing,
//! and the cascaded two-scale forward pipelines.
//!
//! The full emotional pipeline runs motion through the frame-level
//! emotional encoder, standardizes against the frame-level translator's
//! predicted neutral, lifts the result to sequence scale, standardizes
//! again with the sequence-level translator, pools, and regresses. The
//! neutral pipeline runs the parallel neutral encoders without
//! standardization or augmentation. Every module is optional behind the
//! component set so the ablation matrix can drop encoders, translators and
//! pooling independently; configurations without frame encoders feed raw
//! motion to the sequence encoder through its width-adapting input map.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{CmisError, Result};
use crate::frame::{
    flt_forward, frame_encoder_forward, standardize, FltParams, FltbConfig, FltbVars,
    FrameEncoderConfig, FrameEncoderParams, FrameEncoderVars,
};
use crate::ida::{ida_apply, IdaConfig, Mode};
use crate::pooling::{
    global_pool, regress, tap_forward, HeadConfig, HeadParams, HeadVars, TapConfig, TapParams,
    TapVars,
};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transformer::{transformer_forward, TransformerConfig, TransformerParams, TransformerVars};
use crate::translator::{slt_forward, SltParams, SltVars, TranslatorConfig, TranslatorVariant};

/// Which of the four cascade modules participate. The regression head is
/// always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ComponentSet {
    /// Frame-level encoders (neutral and emotional).
    pub fle: bool,
    /// Frame-level translator and standardization.
    pub flt: bool,
    /// Sequence-level encoders.
    pub sle: bool,
    /// Sequence-level translator and standardization.
    pub slt: bool,
}

impl Default for ComponentSet {
    fn default() -> Self {
        ComponentSet::FULL
    }
}

impl ComponentSet {
    pub const FULL: ComponentSet = ComponentSet {
        fle: true,
        flt: true,
        sle: true,
        slt: true,
    };

    pub fn validate(&self) -> Result<()> {
        if !self.fle && !self.sle {
            return Err(CmisError::config(
                "component set needs at least one encoder scale",
            ));
        }
        if self.flt && !self.fle {
            return Err(CmisError::config(
                "frame-level translator requires the frame-level encoders",
            ));
        }
        if self.slt && !self.sle {
            return Err(CmisError::config(
                "sequence-level translator requires the sequence-level encoders",
            ));
        }
        Ok(())
    }

    /// Human-readable configuration label, e.g. `FLE+FLT+SLE+SLT+R`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.fle {
            parts.push("FLE");
        }
        if self.flt {
            parts.push("FLT");
        }
        if self.sle {
            parts.push("SLE");
        }
        if self.slt {
            parts.push("SLT");
        }
        parts.push("R");
        parts.join("+")
    }
}

/// Final pooling operator applied before the regression head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PoolingKind {
    Global,
    Tap,
}

/// Every width, depth and behavior switch of the network in one place.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Width of one motion row (2 coordinates per landmark).
    pub motion_width: usize,
    /// Frame-level feature width `D_f`.
    pub frame_width: usize,
    /// Sequence-level feature width `D_s`.
    pub seq_width: usize,
    /// Projection width of the gated-attention scorers (frame gates and
    /// attention pooling).
    pub attention_width: usize,
    /// Transformer feedforward width.
    pub seq_ff_width: usize,
    pub seq_layers: usize,
    pub seq_heads: usize,
    /// Sinusoidal positional encoding in the sequence encoders.
    pub positional: bool,
    /// Scale gate scores by 1/sqrt(attention_width) before the sigmoid.
    pub scale_qk: bool,
    /// Layer normalization inside frame gates and translator blocks.
    pub gate_layer_norm: bool,
    pub ln_eps: f64,
    /// Recurrent hidden width of the sequence translator.
    pub translator_hidden: usize,
    pub translator_variant: TranslatorVariant,
    /// Keep the tanh inside the attention-pooling scorer.
    pub tap_tanh: bool,
    pub pooling: PoolingKind,
    pub components: ComponentSet,
    /// Regression-head hidden width and depth.
    pub head_hidden: usize,
    pub head_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            motion_width: 136,
            frame_width: 128,
            seq_width: 128,
            attention_width: 64,
            seq_ff_width: 256,
            seq_layers: 6,
            seq_heads: 4,
            positional: true,
            scale_qk: true,
            gate_layer_norm: true,
            ln_eps: 1e-8,
            translator_hidden: 128,
            translator_variant: TranslatorVariant::EdLstm,
            tap_tanh: true,
            pooling: PoolingKind::Tap,
            components: ComponentSet::FULL,
            head_hidden: 64,
            head_layers: 2,
        }
    }
}

impl ModelConfig {
    /// Down-scaled profile sized for single-CPU experiments and tests.
    pub fn desk(motion_width: usize) -> Self {
        ModelConfig {
            motion_width,
            frame_width: 12,
            seq_width: 12,
            attention_width: 8,
            seq_ff_width: 16,
            seq_layers: 2,
            seq_heads: 2,
            translator_hidden: 8,
            head_hidden: 16,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.components.validate()?;
        for (name, v) in [
            ("motion_width", self.motion_width),
            ("frame_width", self.frame_width),
            ("seq_width", self.seq_width),
            ("attention_width", self.attention_width),
            ("seq_ff_width", self.seq_ff_width),
            ("seq_layers", self.seq_layers),
            ("seq_heads", self.seq_heads),
            ("translator_hidden", self.translator_hidden),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return Err(CmisError::config("model widths and depths must be positive")
                    .rename(name));
            }
        }
        if self.components.sle {
            self.sequence_encoder_config().validate()?;
        }
        if !self.ln_eps.is_finite() || self.ln_eps <= 0.0 {
            return Err(CmisError::config("ln_eps must be positive"));
        }
        Ok(())
    }

    /// Feature width entering the sequence stage: frame features when the
    /// frame encoders are present, raw motion otherwise.
    pub fn frame_stage_width(&self) -> usize {
        if self.components.fle {
            self.frame_width
        } else {
            self.motion_width
        }
    }

    /// Feature width entering pooling and the regression heads.
    pub fn pooled_width(&self) -> usize {
        if self.components.sle {
            self.seq_width
        } else {
            self.frame_stage_width()
        }
    }

    pub fn frame_encoder_config(&self) -> FrameEncoderConfig {
        FrameEncoderConfig {
            input_width: self.motion_width,
            feature_width: self.frame_width,
            attention_width: self.attention_width,
            scale_qk: self.scale_qk,
            layer_norm: self.gate_layer_norm,
            ln_eps: self.ln_eps,
        }
    }

    pub fn frame_translator_config(&self) -> FltbConfig {
        FltbConfig {
            feature_width: self.frame_width,
            attention_width: self.attention_width,
            scale_qk: self.scale_qk,
            layer_norm: self.gate_layer_norm,
            ln_eps: self.ln_eps,
        }
    }

    pub fn sequence_encoder_config(&self) -> TransformerConfig {
        TransformerConfig {
            input_width: self.frame_stage_width(),
            model_width: self.seq_width,
            ff_width: self.seq_ff_width,
            layers: self.seq_layers,
            heads: self.seq_heads,
            positional: self.positional,
            ln_eps: self.ln_eps,
        }
    }

    pub fn sequence_translator_config(&self) -> TranslatorConfig {
        TranslatorConfig {
            model_width: self.seq_width,
            hidden_width: self.translator_hidden,
            variant: self.translator_variant,
        }
    }

    pub fn tap_config(&self) -> TapConfig {
        TapConfig {
            feature_width: self.pooled_width(),
            attention_width: self.attention_width,
            tanh: self.tap_tanh,
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            input_width: self.pooled_width(),
            hidden_width: self.head_hidden,
            layers: self.head_layers,
        }
    }

    /// One-line structural description of the forward graph, derived purely
    /// from the configuration; ablation reports use it for
    /// configuration-graph comparisons.
    pub fn pipeline_description(&self) -> String {
        let mut out = format!("motion({})", self.motion_width);
        if self.components.fle {
            out += &format!(" -> FLEE({})", self.frame_width);
            if self.components.flt {
                out += " -> FLT/standardize";
            }
        } else {
            out += " [raw motion input]";
        }
        if self.components.sle {
            out += &format!(" -> SLEE({})", self.seq_width);
            if self.components.slt {
                out += &format!(
                    " -> SLT[{}]/standardize",
                    match self.translator_variant {
                        TranslatorVariant::EdLstm => "ed_lstm",
                        TranslatorVariant::EdGru => "ed_gru",
                        TranslatorVariant::Attention => "attention",
                    }
                );
            }
        }
        out += match self.pooling {
            PoolingKind::Global => " -> pool(global)",
            PoolingKind::Tap => " -> pool(tap)",
        };
        out += " -> R";
        out
    }
}

impl CmisError {
    fn rename(self, field: &str) -> CmisError {
        match self {
            CmisError::InvalidConfig { message } => CmisError::InvalidConfig {
                message: format!("{message} ({field})"),
            },
            other => other,
        }
    }
}

/// Identifies one parameter block of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Module {
    Flne,
    Flee,
    Flt,
    Slne,
    Slee,
    Slt,
    Tap,
    HeadR,
    HeadRhat,
}

impl Module {
    pub const ALL: [Module; 9] = [
        Module::Flne,
        Module::Flee,
        Module::Flt,
        Module::Slne,
        Module::Slee,
        Module::Slt,
        Module::Tap,
        Module::HeadR,
        Module::HeadRhat,
    ];

    /// Checkpoint path prefix for this module's parameters.
    pub fn path(&self) -> &'static str {
        match self {
            Module::Flne => "flne",
            Module::Flee => "flee",
            Module::Flt => "flt",
            Module::Slne => "slne",
            Module::Slee => "slee",
            Module::Slt => "slt",
            Module::Tap => "tap",
            Module::HeadR => "head_r",
            Module::HeadRhat => "head_rhat",
        }
    }
}

/// All trainable parameters plus freeze flags and the protocol stage
/// marker (count of completed training stages, 0..=4).
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelState {
    pub config: ModelConfig,
    pub flne: Option<FrameEncoderParams>,
    pub flee: Option<FrameEncoderParams>,
    pub flt: Option<FltParams>,
    pub slne: Option<TransformerParams>,
    pub slee: Option<TransformerParams>,
    pub slt: Option<SltParams>,
    pub tap: Option<TapParams>,
    pub head_r: HeadParams,
    pub head_r_hat: Option<HeadParams>,
    pub frozen: BTreeSet<Module>,
    pub completed_stages: usize,
}

impl ModelState {
    /// Initializes parameters for every module the component set enables.
    /// Each module draws from its own derived stream, so enabling or
    /// disabling one module never shifts another's initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let module_stream = |m: Module| rng::stream(seed, &[rng::label::PARAM_INIT, m as u64]);
        let c = config.components;
        Ok(ModelState {
            flne: c
                .fle
                .then(|| FrameEncoderParams::init(&config.frame_encoder_config(), &mut module_stream(Module::Flne))),
            flee: c
                .fle
                .then(|| FrameEncoderParams::init(&config.frame_encoder_config(), &mut module_stream(Module::Flee))),
            flt: c
                .flt
                .then(|| FltParams::init(&config.frame_translator_config(), &mut module_stream(Module::Flt))),
            slne: c
                .sle
                .then(|| TransformerParams::init(&config.sequence_encoder_config(), &mut module_stream(Module::Slne))),
            slee: c
                .sle
                .then(|| TransformerParams::init(&config.sequence_encoder_config(), &mut module_stream(Module::Slee))),
            slt: c
                .slt
                .then(|| SltParams::init(&config.sequence_translator_config(), &mut module_stream(Module::Slt))),
            tap: (config.pooling == PoolingKind::Tap)
                .then(|| TapParams::init(&config.tap_config(), &mut module_stream(Module::Tap))),
            head_r: HeadParams::init(&config.head_config(), &mut module_stream(Module::HeadR)),
            head_r_hat: Some(HeadParams::init(
                &config.head_config(),
                &mut module_stream(Module::HeadRhat),
            )),
            frozen: BTreeSet::new(),
            completed_stages: 0,
            config,
        })
    }

    pub fn is_frozen(&self, m: Module) -> bool {
        self.frozen.contains(&m)
    }

    pub fn freeze(&mut self, m: Module) {
        self.frozen.insert(m);
    }

    /// Drops the temporary pre-training head once its stage is over.
    pub fn discard_temporary_head(&mut self) {
        self.head_r_hat = None;
    }

    /// All parameters as `(path, tensor)` in a stable order. Paths are
    /// `module.entry`, e.g. `flee.gate.w_q` or `slne.layer2.ff1_w`.
    pub fn visit_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for m in Module::ALL {
            let prefix = m.path();
            match m {
                Module::Flne | Module::Flee => {
                    let enc = if m == Module::Flne { &self.flne } else { &self.flee };
                    if let Some(p) = enc {
                        out.push((format!("{prefix}.w1"), &p.w1));
                        out.push((format!("{prefix}.b1"), &p.b1));
                        out.push((format!("{prefix}.w2"), &p.w2));
                        out.push((format!("{prefix}.b2"), &p.b2));
                        for (name, t) in p.gate.entries() {
                            out.push((format!("{prefix}.gate.{name}"), t));
                        }
                    }
                }
                Module::Flt => {
                    if let Some(p) = &self.flt {
                        for (i, block) in p.blocks.iter().enumerate() {
                            for (name, t) in block.entries() {
                                out.push((format!("{prefix}.block{i}.{name}"), t));
                            }
                        }
                    }
                }
                Module::Slne | Module::Slee => {
                    let enc = if m == Module::Slne { &self.slne } else { &self.slee };
                    if let Some(p) = enc {
                        out.push((format!("{prefix}.input_map"), &p.input_map));
                        out.push((format!("{prefix}.input_bias"), &p.input_bias));
                        for (i, layer) in p.layers.iter().enumerate() {
                            for (name, t) in layer.entries() {
                                out.push((format!("{prefix}.layer{i}.{name}"), t));
                            }
                        }
                    }
                }
                Module::Slt => {
                    if let Some(p) = &self.slt {
                        for (name, t) in p.entries() {
                            out.push((format!("{prefix}.{name}"), t));
                        }
                    }
                }
                Module::Tap => {
                    if let Some(p) = &self.tap {
                        for (name, t) in p.entries() {
                            out.push((format!("{prefix}.{name}"), t));
                        }
                    }
                }
                Module::HeadR => {
                    for (name, t) in self.head_r.entries() {
                        out.push((format!("{prefix}.{name}"), t));
                    }
                }
                Module::HeadRhat => {
                    if let Some(p) = &self.head_r_hat {
                        for (name, t) in p.entries() {
                            out.push((format!("{prefix}.{name}"), t));
                        }
                    }
                }
            }
        }
        out
    }

    /// Mutable twin of [`visit_params`](Self::visit_params); identical paths
    /// and order.
    pub fn visit_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        fn frame_encoder<'a>(
            out: &mut Vec<(String, &'a mut Tensor)>,
            prefix: &str,
            p: &'a mut FrameEncoderParams,
        ) {
            out.push((format!("{prefix}.w1"), &mut p.w1));
            out.push((format!("{prefix}.b1"), &mut p.b1));
            out.push((format!("{prefix}.w2"), &mut p.w2));
            out.push((format!("{prefix}.b2"), &mut p.b2));
            for (name, t) in p.gate.entries_mut() {
                out.push((format!("{prefix}.gate.{name}"), t));
            }
        }
        fn seq_encoder<'a>(
            out: &mut Vec<(String, &'a mut Tensor)>,
            prefix: &str,
            p: &'a mut TransformerParams,
        ) {
            out.push((format!("{prefix}.input_map"), &mut p.input_map));
            out.push((format!("{prefix}.input_bias"), &mut p.input_bias));
            for (i, layer) in p.layers.iter_mut().enumerate() {
                for (name, t) in layer.entries_mut() {
                    out.push((format!("{prefix}.layer{i}.{name}"), t));
                }
            }
        }
        if let Some(p) = &mut self.flne {
            frame_encoder(&mut out, "flne", p);
        }
        if let Some(p) = &mut self.flee {
            frame_encoder(&mut out, "flee", p);
        }
        if let Some(p) = &mut self.flt {
            for (i, block) in p.blocks.iter_mut().enumerate() {
                for (name, t) in block.entries_mut() {
                    out.push((format!("flt.block{i}.{name}"), t));
                }
            }
        }
        if let Some(p) = &mut self.slne {
            seq_encoder(&mut out, "slne", p);
        }
        if let Some(p) = &mut self.slee {
            seq_encoder(&mut out, "slee", p);
        }
        if let Some(p) = &mut self.slt {
            for (name, t) in p.entries_mut() {
                out.push((format!("slt.{name}"), t));
            }
        }
        if let Some(p) = &mut self.tap {
            for (name, t) in p.entries_mut() {
                out.push((format!("tap.{name}"), t));
            }
        }
        for (name, t) in self.head_r.entries_mut() {
            out.push((format!("head_r.{name}"), t));
        }
        if let Some(p) = &mut self.head_r_hat {
            for (name, t) in p.entries_mut() {
                out.push((format!("head_rhat.{name}"), t));
            }
        }
        out
    }

    /// FNV-1a hash over a module's parameter bits; the freeze tests compare
    /// these across optimizer steps.
    pub fn module_hash(&self, m: Module) -> u64 {
        let prefix = m.path();
        let mut hash: u64 = 0xcbf29ce484222325;
        for (path, tensor) in self.visit_params() {
            if path.starts_with(prefix) && path.as_bytes().get(prefix.len()) == Some(&b'.') {
                for &v in tensor.data() {
                    for byte in v.to_bits().to_le_bytes() {
                        hash ^= byte as u64;
                        hash = hash.wrapping_mul(0x100000001b3);
                    }
                }
            }
        }
        hash
    }

    /// Binds every present module onto a tape. A module becomes trainable
    /// (gradient-carrying leaf) only when the closure approves it and it is
    /// not frozen; otherwise its parameters enter as constants, which the
    /// backward pass prunes. Returns the handles and the `(path, var)` list
    /// of trainable leaves for gradient extraction.
    pub fn bind(
        &self,
        tape: &mut Tape,
        trainable: impl Fn(Module) -> bool,
    ) -> (ModelVars, Vec<(String, Var)>) {
        let mut leaves = Vec::new();
        let active = |m: Module| trainable(m) && !self.is_frozen(m);

        let vars = ModelVars {
            flne: self.flne.as_ref().map(|p| p.bind(tape, active(Module::Flne))),
            flee: self.flee.as_ref().map(|p| p.bind(tape, active(Module::Flee))),
            flt: self.flt.as_ref().map(|p| p.bind(tape, active(Module::Flt))),
            slne: self.slne.as_ref().map(|p| p.bind(tape, active(Module::Slne))),
            slee: self.slee.as_ref().map(|p| p.bind(tape, active(Module::Slee))),
            slt: self.slt.as_ref().map(|p| p.bind(tape, active(Module::Slt))),
            tap: self.tap.as_ref().map(|p| p.bind(tape, active(Module::Tap))),
            head_r: self.head_r.bind(tape, active(Module::HeadR)),
            head_r_hat: self
                .head_r_hat
                .as_ref()
                .map(|p| p.bind(tape, active(Module::HeadRhat))),
        };

        // The var walk visits modules in the same stable order as
        // visit_params, so paths and handles align one to one.
        let mut var_walk = Vec::new();
        collect_vars(&vars, &mut var_walk);
        let params = self.visit_params();
        debug_assert_eq!(params.len(), var_walk.len());
        for ((path, _), var) in params.into_iter().zip(var_walk) {
            if active(module_of_path(&path)) {
                leaves.push((path, var));
            }
        }
        (vars, leaves)
    }
}

fn module_of_path(path: &str) -> Module {
    let prefix = path.split('.').next().unwrap_or(path);
    match prefix {
        "flne" => Module::Flne,
        "flee" => Module::Flee,
        "flt" => Module::Flt,
        "slne" => Module::Slne,
        "slee" => Module::Slee,
        "slt" => Module::Slt,
        "tap" => Module::Tap,
        "head_r" => Module::HeadR,
        "head_rhat" => Module::HeadRhat,
        other => panic!("unknown parameter path prefix {other}"),
    }
}

fn collect_vars(vars: &ModelVars, out: &mut Vec<Var>) {
    fn frame_encoder(out: &mut Vec<Var>, p: &FrameEncoderVars) {
        out.extend([p.w1, p.b1, p.w2, p.b2]);
        gate(out, &p.gate);
    }
    fn gate(out: &mut Vec<Var>, g: &FltbVars) {
        out.extend([g.w_q, g.w_k, g.w_v, g.w_o, g.ln_gain, g.ln_bias]);
    }
    fn seq_encoder(out: &mut Vec<Var>, p: &TransformerVars) {
        out.extend([p.input_map, p.input_bias]);
        for l in &p.layers {
            out.extend([
                l.w_q, l.b_q, l.w_k, l.b_k, l.w_v, l.b_v, l.w_o, l.b_o, l.ln1_gain, l.ln1_bias,
                l.w_f1, l.b_f1, l.w_f2, l.b_f2, l.ln2_gain, l.ln2_bias,
            ]);
        }
    }
    fn head(out: &mut Vec<Var>, p: &HeadVars) {
        for (w, b) in &p.hidden {
            out.extend([*w, *b]);
        }
        out.extend([p.out_w, p.out_b]);
    }
    if let Some(p) = &vars.flne {
        frame_encoder(out, p);
    }
    if let Some(p) = &vars.flee {
        frame_encoder(out, p);
    }
    if let Some(blocks) = &vars.flt {
        for b in blocks {
            gate(out, b);
        }
    }
    if let Some(p) = &vars.slne {
        seq_encoder(out, p);
    }
    if let Some(p) = &vars.slee {
        seq_encoder(out, p);
    }
    if let Some(p) = &vars.slt {
        match p {
            SltVars::EdLstm(p) | SltVars::EdGru(p) => {
                out.extend([
                    p.enc.w, p.enc.u, p.enc.b, p.dec.w, p.dec.u, p.dec.b, p.out_map, p.out_bias,
                ]);
            }
            SltVars::Attention(p) => out.extend([p.w_q, p.w_k, p.w_v, p.w_o, p.b_o]),
        }
    }
    if let Some(p) = &vars.tap {
        out.extend([p.w_proj, p.w_score]);
    }
    head(out, &vars.head_r);
    if let Some(p) = &vars.head_r_hat {
        head(out, p);
    }
}

/// Tape handles for every bound module.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub flne: Option<FrameEncoderVars>,
    pub flee: Option<FrameEncoderVars>,
    pub flt: Option<Vec<FltbVars>>,
    pub slne: Option<TransformerVars>,
    pub slee: Option<TransformerVars>,
    pub slt: Option<SltVars>,
    pub tap: Option<TapVars>,
    pub head_r: HeadVars,
    pub head_r_hat: Option<HeadVars>,
}

/// Which regression head closes the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// The final regressor, trained in the last stage.
    Final,
    /// The temporary pre-training head, discarded afterwards.
    Temporary,
}

/// One forward-pass recipe: which optional stages run and in which mode.
#[derive(Clone, Copy, Debug)]
pub struct PipelinePlan {
    /// Apply the translators and standardization (requires trained
    /// translators to be meaningful).
    pub with_translators: bool,
    pub head: HeadKind,
    pub pooling: PoolingKind,
    pub mode: Mode,
}

impl PipelinePlan {
    /// Inference through the full configured cascade.
    pub fn evaluation(cfg: &ModelConfig) -> Self {
        PipelinePlan {
            with_translators: cfg.components.flt || cfg.components.slt,
            head: HeadKind::Final,
            pooling: cfg.pooling,
            mode: Mode::Eval,
        }
    }

    /// Final-stage training: full cascade, augmentation on.
    pub fn regressor_training(cfg: &ModelConfig) -> Self {
        PipelinePlan {
            mode: Mode::Train,
            ..Self::evaluation(cfg)
        }
    }

    /// Emotional pre-training: encoders feed the temporary head directly,
    /// translators skipped, plain mean pooling.
    pub fn emotional_pretraining() -> Self {
        PipelinePlan {
            with_translators: false,
            head: HeadKind::Temporary,
            pooling: PoolingKind::Global,
            mode: Mode::Train,
        }
    }
}

/// Frame-scale emotional features: encoder plus optional augmentation.
/// Without frame encoders this is the raw motion, never augmented.
pub fn emotional_frame_features(
    tape: &mut Tape,
    motion: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
    ida_cfg: &IdaConfig,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Result<Var> {
    match &vars.flee {
        Some(enc) => {
            let v = frame_encoder_forward(tape, motion, enc, &cfg.frame_encoder_config())?;
            Ok(if ida_cfg.enabled_after_flee {
                ida_apply(tape, v, ida_cfg, mode, rng)
            } else {
                v
            })
        }
        None => Ok(motion),
    }
}

/// Frame-scale standardization: subtracts the frame translator's predicted
/// neutral. Returns the standardized features and the prediction itself
/// (for the translator loss); both equal the input when the translator is
/// absent or the plan skips it.
pub fn standardized_frame_features(
    tape: &mut Tape,
    v_fe: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
    with_translators: bool,
) -> Result<(Var, Option<Var>)> {
    match &vars.flt {
        Some(blocks) if with_translators => {
            let predicted = flt_forward(tape, v_fe, blocks, &cfg.frame_translator_config())?;
            Ok((standardize(tape, v_fe, predicted)?, Some(predicted)))
        }
        _ => Ok((v_fe, None)),
    }
}

/// Sequence-scale emotional features: encoder plus optional augmentation.
pub fn emotional_sequence_features(
    tape: &mut Tape,
    frame_feats: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
    ida_cfg: &IdaConfig,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Result<Var> {
    match &vars.slee {
        Some(enc) => {
            let v = transformer_forward(tape, frame_feats, enc, &cfg.sequence_encoder_config())?;
            Ok(if ida_cfg.enabled_after_slee {
                ida_apply(tape, v, ida_cfg, mode, rng)
            } else {
                v
            })
        }
        None => Ok(frame_feats),
    }
}

/// Sequence-scale standardization; see
/// [`standardized_frame_features`](standardized_frame_features).
pub fn standardized_sequence_features(
    tape: &mut Tape,
    v_se: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
    with_translators: bool,
) -> Result<(Var, Option<Var>)> {
    match &vars.slt {
        Some(p) if with_translators => {
            let predicted = slt_forward(tape, v_se, p, &cfg.sequence_translator_config())?;
            Ok((standardize(tape, v_se, predicted)?, Some(predicted)))
        }
        _ => Ok((v_se, None)),
    }
}

/// Neutral features at both scales for one neutral motion sequence: the
/// parallel encoders without standardization or augmentation.
pub struct NeutralFeatures {
    /// Frame-scale output (absent without frame encoders).
    pub frame: Option<Var>,
    /// Deepest available representation: sequence scale when present,
    /// otherwise the frame scale.
    pub deepest: Var,
}

pub fn neutral_features(
    tape: &mut Tape,
    motion: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
) -> Result<NeutralFeatures> {
    let frame = match &vars.flne {
        Some(enc) => Some(frame_encoder_forward(
            tape,
            motion,
            enc,
            &cfg.frame_encoder_config(),
        )?),
        None => None,
    };
    let stage_input = frame.unwrap_or(motion);
    let deepest = match &vars.slne {
        Some(enc) => transformer_forward(tape, stage_input, enc, &cfg.sequence_encoder_config())?,
        None => stage_input,
    };
    Ok(NeutralFeatures { frame, deepest })
}

/// Pools sequence features to one row using the plan's pooling operator.
pub fn pool_features(
    tape: &mut Tape,
    feats: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
    pooling: PoolingKind,
) -> Result<Var> {
    match (pooling, &vars.tap) {
        (PoolingKind::Tap, Some(tap)) => {
            Ok(tap_forward(tape, feats, tap, &cfg.tap_config())?.z)
        }
        (PoolingKind::Tap, None) => Err(CmisError::config(
            "attention pooling requested but no pooling parameters exist",
        )),
        (PoolingKind::Global, _) => global_pool(tape, feats),
    }
}

/// Full forward pass for one motion sequence, producing a `1 x 1`
/// prediction. Augmentation draws (noise after the frame encoder first,
/// then after the sequence encoder) come from `rng`.
pub fn predict(
    tape: &mut Tape,
    motion: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
    plan: &PipelinePlan,
    ida_cfg: &IdaConfig,
    rng: &mut impl RngCore,
) -> Result<Var> {
    let v_fe = emotional_frame_features(tape, motion, vars, cfg, ida_cfg, plan.mode, rng)?;
    let (v_fe_hat, _) = standardized_frame_features(tape, v_fe, vars, cfg, plan.with_translators)?;
    let v_se = emotional_sequence_features(tape, v_fe_hat, vars, cfg, ida_cfg, plan.mode, rng)?;
    let (v_se_hat, _) =
        standardized_sequence_features(tape, v_se, vars, cfg, plan.with_translators)?;
    let pooled = pool_features(tape, v_se_hat, vars, cfg, plan.pooling)?;
    let head = match plan.head {
        HeadKind::Final => &vars.head_r,
        HeadKind::Temporary => vars.head_r_hat.as_ref().ok_or_else(|| {
            CmisError::config("temporary head requested after it was discarded")
        })?,
    };
    regress(tape, pooled, head, &cfg.head_config())
}

/// Batch forward: one prediction row per motion sequence, order-preserving..
/// `rng_for(i)` supplies the augmentation stream for sample `i`.
pub fn predict_batch(
    tape: &mut Tape,
    motions: &[&Tensor],
    vars: &ModelVars,
    cfg: &ModelConfig,
    plan: &PipelinePlan,
    ida_cfg: &IdaConfig,
    mut rng_for: impl FnMut(usize) -> rand_chacha::ChaCha8Rng,
) -> Result<Var> {
    if motions.is_empty() {
        return Err(CmisError::EmptyInput {
            context: String::from("prediction batch"),
        });
    }
    let mut rows = Vec::with_capacity(motions.len());
    for (i, m) in motions.iter().enumerate() {
        let motion = tape.constant((*m).clone());
        let mut stream = rng_for(i);
        rows.push(predict(tape, motion, vars, cfg, plan, ida_cfg, &mut stream)?);
    }
    Ok(tape.stack_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn desk_full() -> ModelConfig {
        ModelConfig::desk(8)
    }

    fn eval_rng() -> rand_chacha::ChaCha8Rng {
        rng::stream(0, &[rng::label::IDA])
    }

    fn motion(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut stream = rng::stream(seed, &[rng::label::STUB_DATA]);
        let mut t = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                t.set(r, c, rng::uniform_in(&mut stream, -1.0, 1.0));
            }
        }
        t
    }

    #[test]
    fn init_only_creates_enabled_modules() {
        let mut cfg = desk_full();
        cfg.components = ComponentSet {
            fle: true,
            flt: false,
            sle: true,
            slt: false,
        };
        cfg.pooling = PoolingKind::Global;
        let state = ModelState::init(cfg, 1).unwrap();
        assert!(state.flne.is_some() && state.flee.is_some());
        assert!(state.flt.is_none() && state.slt.is_none());
        assert!(state.slne.is_some() && state.slee.is_some());
        assert!(state.tap.is_none());
        assert!(state.head_r_hat.is_some());
    }

    #[test]
    fn invalid_component_sets_are_rejected() {
        let mut cfg = desk_full();
        cfg.components = ComponentSet {
            fle: false,
            flt: true,
            sle: true,
            slt: false,
        };
        assert!(ModelState::init(cfg, 1).is_err());
        cfg.components = ComponentSet {
            fle: true,
            flt: false,
            sle: false,
            slt: true,
        };
        assert!(ModelState::init(cfg, 1).is_err());
        cfg.components = ComponentSet {
            fle: false,
            flt: false,
            sle: false,
            slt: false,
        };
        assert!(ModelState::init(cfg, 1).is_err());
    }

    #[test]
    fn component_labels_match_convention() {
        assert_eq!(ComponentSet::FULL.label(), "FLE+FLT+SLE+SLT+R");
        let bare = ComponentSet {
            fle: true,
            flt: false,
            sle: true,
            slt: false,
        };
        assert_eq!(bare.label(), "FLE+SLE+R");
    }

    #[test]
    fn full_pipeline_produces_one_prediction() {
        let cfg = desk_full();
        let state = ModelState::init(cfg, 2).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let m = tape.constant(motion(10, 8, 1));
        let plan = PipelinePlan::evaluation(&cfg);
        let out = predict(
            &mut tape,
            m,
            &vars,
            &cfg,
            &plan,
            &IdaConfig::default(),
            &mut eval_rng(),
        )
        .unwrap();
        assert_eq!(tape.value(out).shape(), (1, 1));
        assert!(tape.value(out).item().is_finite());
    }

    #[test]
    fn cascade_shapes_flow_to_sequence_width() {
        let cfg = desk_full();
        let state = ModelState::init(cfg, 3).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let m = tape.constant(motion(10, 8, 2));
        let ida = IdaConfig::default();
        let mut stream = eval_rng();
        let v_fe =
            emotional_frame_features(&mut tape, m, &vars, &cfg, &ida, Mode::Eval, &mut stream)
                .unwrap();
        assert_eq!(tape.value(v_fe).shape(), (10, cfg.frame_width));
        let (v_fe_hat, predicted) =
            standardized_frame_features(&mut tape, v_fe, &vars, &cfg, true).unwrap();
        assert!(predicted.is_some());
        assert_eq!(tape.value(v_fe_hat).shape(), (10, cfg.frame_width));
        let v_se = emotional_sequence_features(
            &mut tape,
            v_fe_hat,
            &vars,
            &cfg,
            &ida,
            Mode::Eval,
            &mut stream,
        )
        .unwrap();
        assert_eq!(tape.value(v_se).shape(), (10, cfg.seq_width));
        let (v_se_hat, predicted) =
            standardized_sequence_features(&mut tape, v_se, &vars, &cfg, true).unwrap();
        assert!(predicted.is_some());
        assert_eq!(tape.value(v_se_hat).shape(), (10, cfg.seq_width));
    }

    #[test]
    fn zero_sequence_translator_output_leaves_features_unchanged() {
        let cfg = desk_full();
        let mut state = ModelState::init(cfg, 4).unwrap();
        if let Some(SltParams::EdLstm(p)) = &mut state.slt {
            p.out_map = Tensor::zeros(p.out_map.rows(), p.out_map.cols());
            p.out_bias = Tensor::zeros(1, p.out_bias.cols());
        } else {
            panic!("expected the default translator variant");
        }
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let feats = tape.constant(motion(6, cfg.seq_width, 3));
        let (standardized, _) =
            standardized_sequence_features(&mut tape, feats, &vars, &cfg, true).unwrap();
        assert_eq!(tape.value(standardized), tape.value(feats));
    }

    #[test]
    fn ablated_graph_matches_native_configuration_graph() {
        let mut ablated = desk_full();
        ablated.components = ComponentSet {
            fle: true,
            flt: false,
            sle: true,
            slt: false,
        };
        ablated.pooling = PoolingKind::Global;
        let mut native = ModelConfig::desk(8);
        native.components = ComponentSet {
            fle: true,
            flt: false,
            sle: true,
            slt: false,
        };
        native.pooling = PoolingKind::Global;
        assert_eq!(
            ablated.pipeline_description(),
            native.pipeline_description()
        );
        assert_eq!(
            ablated.pipeline_description(),
            "motion(8) -> FLEE(12) -> SLEE(12) -> pool(global) -> R"
        );
    }

    #[test]
    fn sequence_only_configuration_consumes_raw_motion() {
        let mut cfg = desk_full();
        cfg.components = ComponentSet {
            fle: false,
            flt: false,
            sle: true,
            slt: false,
        };
        cfg.pooling = PoolingKind::Global;
        assert_eq!(cfg.frame_stage_width(), 8);
        let state = ModelState::init(cfg, 5).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let m = tape.constant(motion(10, 8, 4));
        let plan = PipelinePlan::evaluation(&cfg);
        let out = predict(
            &mut tape,
            m,
            &vars,
            &cfg,
            &plan,
            &IdaConfig::default(),
            &mut eval_rng(),
        )
        .unwrap();
        assert_eq!(tape.value(out).shape(), (1, 1));
        assert!(cfg.pipeline_description().contains("[raw motion input]"));
    }

    #[test]
    fn initialization_is_deterministic_per_module() {
        let cfg = desk_full();
        let a = ModelState::init(cfg, 7).unwrap();
        let b = ModelState::init(cfg, 7).unwrap();
        let c = ModelState::init(cfg, 8).unwrap();
        for m in Module::ALL {
            assert_eq!(a.module_hash(m), b.module_hash(m), "{m:?}");
        }
        assert_ne!(a.module_hash(Module::Flee), c.module_hash(Module::Flee));
    }

    #[test]
    fn disabling_a_module_does_not_shift_other_initializations() {
        let full = ModelState::init(desk_full(), 9).unwrap();
        let mut cfg = desk_full();
        cfg.components.flt = false;
        cfg.components.slt = false;
        let reduced = ModelState::init(cfg, 9).unwrap();
        assert_eq!(
            full.module_hash(Module::Flee),
            reduced.module_hash(Module::Flee)
        );
        assert_eq!(
            full.module_hash(Module::Slee),
            reduced.module_hash(Module::Slee)
        );
        assert_eq!(
            full.module_hash(Module::HeadR),
            reduced.module_hash(Module::HeadR)
        );
    }

    #[test]
    fn visit_params_paths_are_unique_and_stable() {
        let state = ModelState::init(desk_full(), 10).unwrap();
        let paths: Vec<String> = state.visit_params().into_iter().map(|(p, _)| p).collect();
        let unique: alloc::collections::BTreeSet<&String> = paths.iter().collect();
        assert_eq!(paths.len(), unique.len());
        let mut state2 = state.clone();
        let paths2: Vec<String> = state2
            .visit_params_mut()
            .into_iter()
            .map(|(p, _)| p)
            .collect();
        assert_eq!(paths, paths2);
        assert!(paths.iter().any(|p| p == "flee.gate.w_q"));
        assert!(paths.iter().any(|p| p == "slne.layer1.w_f2"));
        assert!(paths.iter().any(|p| p == "slt.enc.w"));
        assert!(paths.iter().any(|p| p == "head_r.out.w"));
    }

    #[test]
    fn bound_leaves_cover_exactly_the_trainable_modules() {
        let state = ModelState::init(desk_full(), 11).unwrap();
        let mut tape = Tape::new();
        let (_, leaves) = state.bind(&mut tape, |m| m == Module::Slt || m == Module::HeadR);
        assert!(!leaves.is_empty());
        for (path, _) in &leaves {
            assert!(
                path.starts_with("slt.") || path.starts_with("head_r."),
                "unexpected leaf {path}"
            );
        }
        let slt_count = state
            .visit_params()
            .iter()
            .filter(|(p, _)| p.starts_with("slt."))
            .count();
        let head_count = state
            .visit_params()
            .iter()
            .filter(|(p, _)| p.starts_with("head_r."))
            .count();
        assert_eq!(leaves.len(), slt_count + head_count);
    }

    #[test]
    fn frozen_modules_receive_no_gradient() {
        let mut state = ModelState::init(desk_full(), 12).unwrap();
        state.freeze(Module::Flee);
        let mut tape = Tape::new();
        let (vars, leaves) = state.bind(&mut tape, |_| true);
        assert!(leaves.iter().all(|(p, _)| !p.starts_with("flee.")));
        let m = tape.constant(motion(10, 8, 5));
        let plan = PipelinePlan::regressor_training(&cfg_of(&state));
        let mut stream = eval_rng();
        let out = predict(
            &mut tape,
            m,
            &vars,
            &cfg_of(&state),
            &plan,
            &IdaConfig::disabled(),
            &mut stream,
        )
        .unwrap();
        let grads = tape.backward(out);
        // The frozen encoder's vars are constants: no gradient slots at all.
        let frozen_vars = vars.flee.unwrap();
        assert!(grads.get(frozen_vars.w1).is_none());
        // A trainable module does get gradients.
        assert!(leaves
            .iter()
            .any(|(p, v)| p.starts_with("head_r.") && grads.get(*v).is_some()));
    }

    fn cfg_of(state: &ModelState) -> ModelConfig {
        state.config
    }

    #[test]
    fn eval_predictions_are_reproducible_and_augmentation_free() {
        let cfg = desk_full();
        let state = ModelState::init(cfg, 13).unwrap();
        let plan = PipelinePlan::evaluation(&cfg);
        let run = |seed: u64| -> f64 {
            let mut tape = Tape::new();
            let (vars, _) = state.bind(&mut tape, |_| false);
            let m = tape.constant(motion(10, 8, 6));
            let mut stream = rng::stream(seed, &[rng::label::IDA]);
            let out = predict(
                &mut tape,
                m,
                &vars,
                &cfg,
                &plan,
                &IdaConfig::default(),
                &mut stream,
            )
            .unwrap();
            tape.value(out).item()
        };
        // Different augmentation streams cannot matter in eval mode.
        assert_eq!(run(1).to_bits(), run(2).to_bits());
    }

    #[test]
    fn train_mode_augmentation_is_stream_deterministic() {
        let cfg = desk_full();
        let state = ModelState::init(cfg, 14).unwrap();
        let plan = PipelinePlan::regressor_training(&cfg);
        let run = |seed: u64| -> f64 {
            let mut tape = Tape::new();
            let (vars, _) = state.bind(&mut tape, |_| false);
            let m = tape.constant(motion(10, 8, 7));
            let mut stream = rng::stream(seed, &[rng::label::IDA]);
            let out = predict(
                &mut tape,
                m,
                &vars,
                &cfg,
                &plan,
                &IdaConfig::default(),
                &mut stream,
            )
            .unwrap();
            tape.value(out).item()
        };
        assert_eq!(run(1).to_bits(), run(1).to_bits());
        assert_ne!(run(1).to_bits(), run(2).to_bits());
    }

    #[test]
    fn temporary_head_pipeline_runs_and_can_be_discarded() {
        let cfg = desk_full();
        let mut state = ModelState::init(cfg, 15).unwrap();
        let plan = PipelinePlan::emotional_pretraining();
        {
            let mut tape = Tape::new();
            let (vars, _) = state.bind(&mut tape, |_| false);
            let m = tape.constant(motion(10, 8, 8));
            let out = predict(
                &mut tape,
                m,
                &vars,
                &cfg,
                &plan,
                &IdaConfig::disabled(),
                &mut eval_rng(),
            )
            .unwrap();
            assert!(tape.value(out).item().is_finite());
        }
        state.discard_temporary_head();
        assert!(state.head_r_hat.is_none());
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let m = tape.constant(motion(10, 8, 8));
        assert!(predict(
            &mut tape,
            m,
            &vars,
            &cfg,
            &plan,
            &IdaConfig::disabled(),
            &mut eval_rng(),
        )
        .is_err());
        assert!(state.visit_params().iter().all(|(p, _)| !p.starts_with("head_rhat")));
    }

    #[test]
    fn neutral_pipeline_exposes_both_scales() {
        let cfg = desk_full();
        let state = ModelState::init(cfg, 16).unwrap();
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let m = tape.constant(motion(10, 8, 9));
        let feats = neutral_features(&mut tape, m, &vars, &cfg).unwrap();
        assert_eq!(
            tape.value(feats.frame.unwrap()).shape(),
            (10, cfg.frame_width)
        );
        assert_eq!(tape.value(feats.deepest).shape(), (10, cfg.seq_width));
    }

    #[test]
    fn batched_prediction_preserves_sample_order() {
        let cfg = desk_full();
        let state = ModelState::init(cfg, 17).unwrap();
        let plan = PipelinePlan::evaluation(&cfg);
        let samples = [motion(10, 8, 10), motion(10, 8, 11), motion(10, 8, 12)];
        let mut tape = Tape::new();
        let (vars, _) = state.bind(&mut tape, |_| false);
        let refs: Vec<&Tensor> = samples.iter().collect();
        let batch = predict_batch(
            &mut tape,
            &refs,
            &vars,
            &cfg,
            &plan,
            &IdaConfig::default(),
            |i| rng::stream(0, &[rng::label::IDA, i as u64]),
        )
        .unwrap();
        assert_eq!(tape.value(batch).shape(), (3, 1));
        for (i, sample) in samples.iter().enumerate() {
            let mut single = Tape::new();
            let (vars, _) = state.bind(&mut single, |_| false);
            let m = single.constant(sample.clone());
            let one = predict(
                &mut single,
                m,
                &vars,
                &cfg,
                &plan,
                &IdaConfig::default(),
                &mut eval_rng(),
            )
            .unwrap();
            assert_eq!(tape.value(batch).get(i, 0), single.value(one).item());
        }
    }
}
