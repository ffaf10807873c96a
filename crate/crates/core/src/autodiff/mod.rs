//! Tensors, the reverse-mode tape, parameter storage, Adam, and
//! finite-difference gradient checking.

pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{adam_step, AdamConfig, ParamSet, Parameter};
pub use tape::{BnUpdate, Gradients, Mode, Tape, Var, CLIP_EPS};
pub use tensor::{Scalar, Tensor};
