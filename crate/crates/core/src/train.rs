//! The four-stage training protocol: neutral encoders first, emotional
//! encoders with a temporary head second, both translators jointly third,
//! and the final regressor with attention pooling last. Finishing a stage
//! freezes its modules; the temporary head is dropped when its stage ends.
//!
//! Every random decision (shuffling, neutral draws, augmentation) comes
//! from a stream derived from the master seed plus stage/epoch/step tags,
//! so a fixed seed reproduces the metrics log exactly and a resumed run
//! replays the remaining epochs identically. Each stage records a
//! pre-training snapshot row (epoch 0) followed by one row per training
//! epoch; stages whose objective is the regression error additionally
//! record a validation row per epoch. The learning-rate schedule restarts
//! at every stage.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::data::{NeutralBank, Sample, Split};
use crate::error::{CmisError, Result};
use crate::eval;
use crate::frame::average_features;
use crate::ida::{IdaConfig, Mode};
use crate::loss;
use crate::model::{
    emotional_frame_features, emotional_sequence_features, neutral_features, predict_batch,
    standardized_frame_features, standardized_sequence_features, ModelConfig, ModelState,
    ModelVars, Module, PipelinePlan,
};
use crate::optim::{step_lr, Sgd, SgdConfig};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Optimization hyperparameters and the per-stage epoch budget.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Epoch interval between rate decays, counted within each stage.
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Neutral features drawn per individual for the approximation and
    /// translator losses.
    pub n_neutral_draws: usize,
    pub seed: u64,
    /// Training epochs per stage, in protocol order.
    pub stage_epochs: [usize; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_every: 20,
            momentum: 0.9,
            weight_decay: 1e-4,
            n_neutral_draws: 4,
            seed: 0,
            stage_epochs: [25, 25, 25, 25],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CmisError::config("batch_size must be positive"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(CmisError::config("learning rate must be positive"));
        }
        if self.lr_decay_every == 0 {
            return Err(CmisError::config("lr_decay_every must be positive"));
        }
        if self.n_neutral_draws < 2 {
            return Err(CmisError::config(
                "n_neutral_draws must be at least 2 for the pairwise losses",
            ));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stage_epochs.iter().sum()
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// The four protocol stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    Neutral,
    Emotional,
    Translators,
    Regressor,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Neutral,
        Stage::Emotional,
        Stage::Translators,
        Stage::Regressor,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Neutral => "neutral",
            Stage::Emotional => "emotional",
            Stage::Translators => "translators",
            Stage::Regressor => "regressor",
        }
    }

    /// Modules this stage updates (those present and not yet frozen).
    fn trainables(&self) -> &'static [Module] {
        match self {
            Stage::Neutral => &[Module::Flne, Module::Slne],
            Stage::Emotional => &[Module::Flee, Module::Slee, Module::HeadRhat],
            Stage::Translators => &[Module::Flt, Module::Slt],
            Stage::Regressor => &[Module::HeadR, Module::Tap],
        }
    }
}

/// One metrics-log row. Epoch 0 is the pre-training snapshot of a stage;
/// training epochs are 1-based. `mse` is set when the row's loss is a mean
/// squared error.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRow {
    pub stage: Stage,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub mse: Option<f64>,
    pub lr: f64,
    pub wall_clock_s: f64,
}

/// Wall-clock source, injected so tests and determinism checks can run on a
/// synthetic clock.
pub trait Clock {
    /// Seconds elapsed since the caller's reference point (run start).
    fn elapsed_seconds(&mut self) -> f64;
}

/// Deterministic clock: advances by a fixed step per reading.
#[derive(Clone, Debug)]
pub struct TickClock {
    ticks: u64,
    step: f64,
}

impl TickClock {
    pub fn new(step: f64) -> Self {
        TickClock::starting_at(0, step)
    }

    /// Starts mid-count, for resumed runs that continue an existing log.
    pub fn starting_at(ticks: u64, step: f64) -> Self {
        TickClock { ticks, step }
    }
}

impl Default for TickClock {
    fn default() -> Self {
        TickClock::new(1.0)
    }
}

impl Clock for TickClock {
    fn elapsed_seconds(&mut self) -> f64 {
        self.ticks += 1;
        self.ticks as f64 * self.step
    }
}

/// Everything a training run consumes.
pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub validation: &'a [Sample],
    pub bank: &'a NeutralBank,
}

/// Resume position: the stage to run next and how many of its training
/// epochs are already done. Stage-completion side effects (freezing, head
/// discard) are carried by the restored model state, not replayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cursor {
    pub stage: usize,
    pub epochs_done: usize,
}

impl Cursor {
    pub const START: Cursor = Cursor {
        stage: 0,
        epochs_done: 0,
    };
}

/// Metrics and bookkeeping from a (partial) protocol run.
#[derive(Clone, Debug, Default)]
pub struct ProtocolOutcome {
    pub metrics: Vec<MetricsRow>,
    /// Translator-stage samples skipped because their individual has no
    /// neutral pool, summed over training epochs.
    pub skipped_samples: usize,
}

/// Derives a fresh random stream for one training decision.
fn decision_stream(cfg: &TrainConfig, label: u64, tags: &[usize]) -> rand_chacha::ChaCha8Rng {
    let mut full = Vec::with_capacity(tags.len() + 1);
    full.push(label);
    full.extend(tags.iter().map(|&t| t as u64));
    rng::stream(cfg.seed, &full)
}

fn shuffled_indices(n: usize, cfg: &TrainConfig, stage: Stage, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stream = decision_stream(cfg, rng::label::SHUFFLE, &[stage.index(), epoch]);
    rng::shuffle(&mut stream, &mut idx);
    idx
}

/// Backpropagates the loss and applies one optimizer step to every
/// trainable leaf. Returns the loss value.
fn descend(
    state: &mut ModelState,
    sgd: &mut Sgd,
    tape: &mut Tape,
    loss_var: Var,
    leaves: &[(String, Var)],
    lr: f64,
) -> f64 {
    let value = tape.value(loss_var).item();
    let mut grads = tape.backward(loss_var);
    let mut by_path: BTreeMap<&str, Tensor> = BTreeMap::new();
    for (path, var) in leaves {
        if let Some(g) = grads.take(*var) {
            by_path.insert(path.as_str(), g);
        }
    }
    for (path, tensor) in state.visit_params_mut() {
        if let Some(g) = by_path.get(path.as_str()) {
            sgd.step(&path, tensor, g, lr);
        }
    }
    value
}

/// Assembles the pairwise neutral-approximation loss for a batch of
/// individuals. `epoch` and `step` tag the draw streams.
#[allow(clippy::too_many_arguments)]
fn neutral_batch_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    model_cfg: &ModelConfig,
    bank: &NeutralBank,
    individuals: &[&str],
    cfg: &TrainConfig,
    epoch: usize,
    step: usize,
) -> Result<Var> {
    let mut groups = Vec::with_capacity(individuals.len());
    for (k, id) in individuals.iter().enumerate() {
        let draw_seed = decision_stream(
            cfg,
            rng::label::NEUTRAL_DRAW,
            &[Stage::Neutral.index(), epoch, step, k],
        )
        .next_u64();
        let draws = crate::data::draw_neutrals(bank, id, cfg.n_neutral_draws, draw_seed)?;
        let mut feats = Vec::with_capacity(draws.len());
        for s in draws {
            let motion = tape.constant(s.motion.diffs.clone());
            feats.push(neutral_features(tape, motion, vars, model_cfg)?.deepest);
        }
        groups.push(feats);
    }
    loss::loss_neutral_approx(tape, &groups)
}

/// One pass over the neutral bank's individuals. Updates parameters when an
/// optimizer is supplied, otherwise just measures. Returns the mean batch
/// loss.
fn neutral_epoch(
    state: &mut ModelState,
    mut sgd: Option<&mut Sgd>,
    bank: &NeutralBank,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<f64> {
    let model_cfg = state.config;
    let individuals: Vec<&str> = bank.individuals().collect();
    let order = shuffled_indices(individuals.len(), cfg, Stage::Neutral, epoch);
    let mut losses = Vec::new();
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut tape = Tape::new();
        let train = sgd.is_some();
        let (vars, leaves) = state.bind(&mut tape, |m| {
            train && Stage::Neutral.trainables().contains(&m)
        });
        let batch: Vec<&str> = chunk.iter().map(|&i| individuals[i]).collect();
        let loss_var =
            neutral_batch_loss(&mut tape, &vars, &model_cfg, bank, &batch, cfg, epoch, step)?;
        losses.push(match sgd.as_deref_mut() {
            Some(s) => descend(state, s, &mut tape, loss_var, &leaves, lr),
            None => tape.value(loss_var).item(),
        });
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Stage 1: trains the neutral encoders with the approximation loss over
/// repeated draws from each individual's neutral pool.
fn run_stage_neutral(
    state: &mut ModelState,
    sgd: &mut Sgd,
    data: &TrainData,
    cfg: &TrainConfig,
    clock: &mut dyn Clock,
    out: &mut ProtocolOutcome,
    epochs_done: usize,
) -> Result<()> {
    if data.bank.is_empty() {
        return Err(CmisError::EmptyInput {
            context: String::from("neutral bank"),
        });
    }
    let stage = Stage::Neutral;
    if epochs_done == 0 {
        let loss = neutral_epoch(state, None, data.bank, cfg, 0, 0.0)?;
        out.metrics.push(MetricsRow {
            stage,
            epoch: 0,
            split: Split::Train,
            loss,
            mse: None,
            lr: 0.0,
            wall_clock_s: clock.elapsed_seconds(),
        });
    }
    for epoch in (epochs_done + 1)..=cfg.stage_epochs[stage.index()] {
        let lr = step_lr(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every, epoch - 1);
        let loss = neutral_epoch(state, Some(&mut *sgd), data.bank, cfg, epoch, lr)?;
        out.metrics.push(MetricsRow {
            stage,
            epoch,
            split: Split::Train,
            loss,
            mse: None,
            lr,
            wall_clock_s: clock.elapsed_seconds(),
        });
    }
    state.freeze(Module::Flne);
    state.freeze(Module::Slne);
    state.completed_stages = state.completed_stages.max(1);
    Ok(())
}

/// Regression-loss pass shared by the emotional and regressor stages.
#[allow(clippy::too_many_arguments)]
fn regression_epoch(
    state: &mut ModelState,
    mut sgd: Option<&mut Sgd>,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    stage: Stage,
    plan: &PipelinePlan,
    epoch: usize,
    lr: f64,
) -> Result<f64> {
    let model_cfg = state.config;
    let order = shuffled_indices(data.train.len(), cfg, stage, epoch);
    let mut losses = Vec::new();
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut tape = Tape::new();
        let train = sgd.is_some();
        let (vars, leaves) =
            state.bind(&mut tape, |m| train && stage.trainables().contains(&m));
        let motions: Vec<_> = chunk.iter().map(|&i| &data.train[i].motion.diffs).collect();
        let preds = predict_batch(&mut tape, &motions, &vars, &model_cfg, plan, ida, |i| {
            decision_stream(cfg, rng::label::IDA, &[stage.index(), epoch, step, i])
        })?;
        let mut labels = Tensor::zeros(chunk.len(), 1);
        for (r, &i) in chunk.iter().enumerate() {
            labels.set(r, 0, data.train[i].label);
        }
        let labels = tape.constant(labels);
        let loss_var = loss::loss_mse(&mut tape, labels, preds)?;
        losses.push(match sgd.as_deref_mut() {
            Some(s) => descend(state, s, &mut tape, loss_var, &leaves, lr),
            None => tape.value(loss_var).item(),
        });
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Eval-mode validation MSE under the stage's pipeline plan, as a metrics
/// row. `None` when there is no validation split.
#[allow(clippy::too_many_arguments)]
fn validation_row(
    state: &ModelState,
    data: &TrainData,
    cfg: &TrainConfig,
    stage: Stage,
    plan: &PipelinePlan,
    epoch: usize,
    lr: f64,
    clock: &mut dyn Clock,
) -> Result<Option<MetricsRow>> {
    if data.validation.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&Sample> = data.validation.iter().collect();
    let preds = eval::predictions_with_plan(state, &refs, plan, cfg.batch_size)?;
    let labels: Vec<f64> = refs.iter().map(|s| s.label).collect();
    let mse = loss::mse(&labels, &preds)?;
    Ok(Some(MetricsRow {
        stage,
        epoch,
        split: Split::Validation,
        loss: mse,
        mse: Some(mse),
        lr,
        wall_clock_s: clock.elapsed_seconds(),
    }))
}

/// Shared driver for the two MSE-objective stages (emotional pre-training
/// and final regressor training).
#[allow(clippy::too_many_arguments)]
fn run_regression_stage(
    stage: Stage,
    plan: PipelinePlan,
    state: &mut ModelState,
    sgd: &mut Sgd,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    clock: &mut dyn Clock,
    out: &mut ProtocolOutcome,
    epochs_done: usize,
) -> Result<()> {
    if data.train.is_empty() {
        return Err(CmisError::EmptyInput {
            context: String::from("training split"),
        });
    }
    let eval_plan = PipelinePlan {
        mode: Mode::Eval,
        ..plan
    };
    if epochs_done == 0 {
        let loss = regression_epoch(state, None, data, cfg, ida, stage, &eval_plan, 0, 0.0)?;
        out.metrics.push(MetricsRow {
            stage,
            epoch: 0,
            split: Split::Train,
            loss,
            mse: Some(loss),
            lr: 0.0,
            wall_clock_s: clock.elapsed_seconds(),
        });
        if let Some(row) = validation_row(state, data, cfg, stage, &eval_plan, 0, 0.0, clock)? {
            out.metrics.push(row);
        }
    }
    for epoch in (epochs_done + 1)..=cfg.stage_epochs[stage.index()] {
        let lr = step_lr(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every, epoch - 1);
        let loss = regression_epoch(
            state,
            Some(&mut *sgd),
            data,
            cfg,
            ida,
            stage,
            &plan,
            epoch,
            lr,
        )?;
        out.metrics.push(MetricsRow {
            stage,
            epoch,
            split: Split::Train,
            loss,
            mse: Some(loss),
            lr,
            wall_clock_s: clock.elapsed_seconds(),
        });
        if let Some(row) = validation_row(state, data, cfg, stage, &eval_plan, epoch, lr, clock)? {
            out.metrics.push(row);
        }
    }
    Ok(())
}

/// Joint translator pass: the frame and sequence translator losses for each
/// sample, summed with equal weight, against averaged frozen-neutral
/// benchmarks. Returns `(mean batch loss, samples skipped)`; the loss is
/// `None` when every sample was skipped.
fn translator_epoch(
    state: &mut ModelState,
    mut sgd: Option<&mut Sgd>,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    epoch: usize,
    lr: f64,
) -> Result<(Option<f64>, usize)> {
    let stage = Stage::Translators;
    let model_cfg = state.config;
    let order = shuffled_indices(data.train.len(), cfg, stage, epoch);
    let mut losses = Vec::new();
    let mut skipped = 0usize;
    let mode = if sgd.is_some() { Mode::Train } else { Mode::Eval };
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut tape = Tape::new();
        let train = sgd.is_some();
        let (vars, leaves) =
            state.bind(&mut tape, |m| train && stage.trainables().contains(&m));
        let mut sample_losses = Vec::new();
        for (k, &i) in chunk.iter().enumerate() {
            let sample = &data.train[i];
            let draw_seed = decision_stream(
                cfg,
                rng::label::NEUTRAL_DRAW,
                &[stage.index(), epoch, step, k],
            )
            .next_u64();
            let draws = match crate::data::draw_neutrals(
                data.bank,
                &sample.motion.individual_id,
                cfg.n_neutral_draws,
                draw_seed,
            ) {
                Ok(d) => d,
                Err(CmisError::EmptyPool { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };

            // Benchmarks at both scales from the frozen neutral pipeline.
            let mut frame_feats = Vec::new();
            let mut deep_feats = Vec::new();
            for d in &draws {
                let motion = tape.constant(d.motion.diffs.clone());
                let nf = neutral_features(&mut tape, motion, &vars, &model_cfg)?;
                if let Some(f) = nf.frame {
                    frame_feats.push(f);
                }
                deep_feats.push(nf.deepest);
            }

            // Emotional side with both translators active.
            let motion = tape.constant(sample.motion.diffs.clone());
            let mut ida_stream =
                decision_stream(cfg, rng::label::IDA, &[stage.index(), epoch, step, k]);
            let v_fe = emotional_frame_features(
                &mut tape,
                motion,
                &vars,
                &model_cfg,
                ida,
                mode,
                &mut ida_stream,
            )?;
            let (v_fe_hat, frame_pred) =
                standardized_frame_features(&mut tape, v_fe, &vars, &model_cfg, true)?;
            let mut terms = Vec::new();
            if let Some(pred) = frame_pred {
                let benchmark = average_features(&mut tape, &frame_feats)?;
                terms.push(loss::loss_translator(&mut tape, benchmark, pred)?);
            }
            let v_se = emotional_sequence_features(
                &mut tape,
                v_fe_hat,
                &vars,
                &model_cfg,
                ida,
                mode,
                &mut ida_stream,
            )?;
            let (_, seq_pred) =
                standardized_sequence_features(&mut tape, v_se, &vars, &model_cfg, true)?;
            if let Some(pred) = seq_pred {
                let benchmark = average_features(&mut tape, &deep_feats)?;
                terms.push(loss::loss_translator(&mut tape, benchmark, pred)?);
            }
            let mut total = terms[0];
            for t in &terms[1..] {
                total = tape.add(total, *t);
            }
            sample_losses.push(total);
        }
        if sample_losses.is_empty() {
            continue;
        }
        let stacked = tape.stack_rows(&sample_losses);
        let loss_var = tape.mean_all(stacked);
        losses.push(match sgd.as_deref_mut() {
            Some(s) => descend(state, s, &mut tape, loss_var, &leaves, lr),
            None => tape.value(loss_var).item(),
        });
    }
    let mean = if losses.is_empty() {
        None
    } else {
        Some(losses.iter().sum::<f64>() / losses.len() as f64)
    };
    Ok((mean, skipped))
}

/// Stage 3: trains frame and sequence translators jointly against frozen
/// neutral benchmarks. Samples whose individual is missing from the bank
/// are skipped and counted. Without any translator the stage is a no-op
/// that emits no rows.
#[allow(clippy::too_many_arguments)]
fn run_stage_translators(
    state: &mut ModelState,
    sgd: &mut Sgd,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    clock: &mut dyn Clock,
    out: &mut ProtocolOutcome,
    epochs_done: usize,
) -> Result<()> {
    let stage = Stage::Translators;
    if state.flt.is_some() || state.slt.is_some() {
        if epochs_done == 0 {
            let (loss, _) = translator_epoch(state, None, data, cfg, ida, 0, 0.0)?;
            if let Some(loss) = loss {
                out.metrics.push(MetricsRow {
                    stage,
                    epoch: 0,
                    split: Split::Train,
                    loss,
                    mse: None,
                    lr: 0.0,
                    wall_clock_s: clock.elapsed_seconds(),
                });
            }
        }
        for epoch in (epochs_done + 1)..=cfg.stage_epochs[stage.index()] {
            let lr = step_lr(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every, epoch - 1);
            let (loss, skipped) =
                translator_epoch(state, Some(&mut *sgd), data, cfg, ida, epoch, lr)?;
            out.skipped_samples += skipped;
            if let Some(loss) = loss {
                out.metrics.push(MetricsRow {
                    stage,
                    epoch,
                    split: Split::Train,
                    loss,
                    mse: None,
                    lr,
                    wall_clock_s: clock.elapsed_seconds(),
                });
            }
        }
    }
    state.freeze(Module::Flt);
    state.freeze(Module::Slt);
    state.completed_stages = state.completed_stages.max(3);
    Ok(())
}

/// Runs the protocol from `resume` to completion. Completion side effects
/// (freezing, head discard) happen at stage boundaries exactly as in an
/// uninterrupted run; stages before the cursor are assumed done and their
/// effects already present in `state`.
pub fn run_protocol(
    state: &mut ModelState,
    sgd: &mut Sgd,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    clock: &mut dyn Clock,
    resume: Cursor,
) -> Result<ProtocolOutcome> {
    run_protocol_until(state, sgd, data, cfg, ida, clock, resume, Stage::ALL.len())
}

/// Like [`run_protocol`](run_protocol) but stops after `stop_after` stages
/// of the whole protocol have run (counted from the protocol start, not
/// the cursor), so callers can checkpoint at stage boundaries. Every
/// per-stage decision is seeded independently, so splitting one run into
/// several spans replays the uninterrupted run exactly.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol_until(
    state: &mut ModelState,
    sgd: &mut Sgd,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    clock: &mut dyn Clock,
    resume: Cursor,
    stop_after: usize,
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    ida.validate()?;
    state.config.validate()?;
    let mut out = ProtocolOutcome::default();
    for stage in Stage::ALL {
        if stage.index() < resume.stage || stage.index() >= stop_after {
            continue;
        }
        let epochs_done = if stage.index() == resume.stage {
            resume.epochs_done
        } else {
            0
        };
        match stage {
            Stage::Neutral => {
                run_stage_neutral(state, sgd, data, cfg, clock, &mut out, epochs_done)?
            }
            Stage::Emotional => {
                run_regression_stage(
                    stage,
                    PipelinePlan::emotional_pretraining(),
                    state,
                    sgd,
                    data,
                    cfg,
                    ida,
                    clock,
                    &mut out,
                    epochs_done,
                )?;
                state.freeze(Module::Flee);
                state.freeze(Module::Slee);
                state.discard_temporary_head();
                state.completed_stages = state.completed_stages.max(2);
            }
            Stage::Translators => {
                run_stage_translators(state, sgd, data, cfg, ida, clock, &mut out, epochs_done)?
            }
            Stage::Regressor => {
                run_regression_stage(
                    stage,
                    PipelinePlan::regressor_training(&state.config),
                    state,
                    sgd,
                    data,
                    cfg,
                    ida,
                    clock,
                    &mut out,
                    epochs_done,
                )?;
                state.completed_stages = 4;
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper: fresh optimizer, full protocol from the start.
pub fn run_full_protocol(
    state: &mut ModelState,
    data: &TrainData,
    cfg: &TrainConfig,
    ida: &IdaConfig,
    clock: &mut dyn Clock,
) -> Result<ProtocolOutcome> {
    let mut sgd = Sgd::new(cfg.sgd_config());
    run_protocol(state, &mut sgd, data, cfg, ida, clock, Cursor::START)
}
