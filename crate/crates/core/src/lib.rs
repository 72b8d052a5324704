//! Cascaded two-scale individual standardization for backchannel agreement regression.
//!
//! The crate implements the full numeric stack for training and evaluating a
//! cascaded standardization model on facial-landmark motion sequences:
//!
//! * [`tensor`] / [`tape`] — a small dense 2-D tensor type and a reverse-mode
//!   autodiff tape covering exactly the operations the model needs.
//! * [`data`] / [`synth`] — motion windowing, neutral-pool construction,
//!   modality classification, and a synthetic sequence generator with planted
//!   per-individual baselines.
//! * [`frame`] / [`transformer`] / [`translator`] — frame-level encoders with a
//!   gated attention block, the stacked frame-level translator, the
//!   sequence-level transformer encoders, and the encoder–decoder sequence
//!   translators (LSTM, GRU, and single-layer attention variants).
//! * [`ida`] / [`pooling`] — train-time feature augmentation (noise + masking)
//!   and temporal pooling (gated attention pooling and plain averaging) plus
//!   the regression heads.
//! * [`loss`] / [`optim`] / [`train`] — the three training losses, SGD with
//!   momentum and step learning-rate decay, and the four-stage protocol
//!   (neutral encoders → emotional encoders → translators → regressor).
//! * [`eval`] / [`ablation`] — MSE evaluation, kernel density estimates,
//!   agreement binning, centroid-separation analysis, and the ablation matrix.
//!
//! Everything is `no_std` + `alloc`; all side effects (files, wall clock,
//! threads) are injected by the caller. Randomness is fully deterministic:
//! every consumer derives an independent ChaCha8 stream from the master seed
//! and a stream label, so results are reproducible bit-for-bit regardless of
//! evaluation order.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod data;
pub mod error;
pub mod eval;
pub mod fmath;
pub mod frame;
pub mod gradcheck;
pub mod ida;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pooling;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod transformer;
pub mod translator;

pub use error::CmisError;
pub use tensor::Tensor;
