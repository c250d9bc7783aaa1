//! Dual-pipeline cross-modal Transformer for binary hate-speech detection
//! over paired audio and transcripts.
//!
//! The crate is organised bottom-up:
//!
//! * [`dsp`]: resampling, padding and the log-mel front end.
//! * [`text`]: vocabulary handling and BOS/EOS-delimited tokenization.
//! * [`nn`]: the layer toolkit (linear, conv, LSTM, attention, Transformer
//!   stacks) with hand-written backward passes and a finite-difference checker.
//! * [`sampling`]: speech and text input-adaptation blocks.
//! * [`model`]: both pipelines, attentive fusion, the classifier head and
//!   the ablation variants.
//! * [`train`]: AdamW, the warmup schedule, metrics, manifests, the synthetic
//!   task and the training loop.
//! * [`checkpoint`]: the versioned parameter container.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dsp;
pub mod error;
pub mod model;
pub mod nn;
pub mod sampling;
pub mod text;
pub mod train;

pub use error::{Error, Result};
