//! Dense tensors, reverse-mode differentiation, layers and Adam.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, Direction};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{BatchNormState, Mlp};
pub use params::{accumulate, apply_step, GradMap, Module, ParamGroup, ParamStore};
pub use tape::{sigmoid, Activation, BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

/// Arithmetic precision of a run. `F32` rounds every forward value and every
/// updated parameter through single precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}
