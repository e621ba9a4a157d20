//! Dense `f64` tensors and a define-by-run reverse-mode differentiation tape.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] and addressed through [`Var`] handles. Trainable parameters are
//! owned by a [`ParamStore`] and bound onto a tape lazily, once per tape, so a
//! parameter used many times accumulates a single gradient.

mod error;
mod gradcheck;
mod kernels;
mod params;
mod shape;
mod tape;
mod tensor;

pub use error::TensorError;
pub use gradcheck::{grad_check, grad_check_params, numerical_gradient};
pub use params::{ParamId, ParamStore};
pub use shape::broadcast_shape;
pub use tape::{Tape, UnaryOp, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
