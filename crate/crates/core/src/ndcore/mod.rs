//! Dense tensors, a reverse-mode tape, parameter sets and Adam.

mod adam;
mod gradcheck;
pub mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, rel_error, GradCheck};
pub use mlp::mlp_forward;
pub use params::{ParamSet, Role};
pub use tape::{backward, sigmoid, softplus, Bound, Tape, Var};
pub use tensor::Tensor;
