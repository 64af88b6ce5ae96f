//! Task-aligned generative meta-learning for zero-shot classification.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense tensors, a reverse-mode tape, layers and Adam.
//! - [`data`]: datasets, splits, episodic task sampling and fusion.
//! - [`tae`]: the task-adversarial autoencoder that aligns task encodings.
//! - [`mgan`]: the attribute-conditioned GAN trained with inner/outer meta steps.
//! - [`eval`]: feature synthesis, the softmax head and ZSL/GZSL metrics.
//! - [`cli`]: configuration, checkpoints and run orchestration.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod mgan;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod tae;

pub use error::{Error, Result};
