//! Reverse-mode automatic differentiation over dense row-major tensors.

pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{DType, Float, Tensor};
