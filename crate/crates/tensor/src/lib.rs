//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! Every op returns a new immutable [`Tensor`]. When an input requires a
//! gradient (and recording is not disabled via [`no_grad`]), the result keeps
//! a tape node pointing at its parents; [`Tensor::backward`] walks those nodes
//! in reverse construction order.

mod error;
pub mod gradcheck;
pub mod init;
mod ops;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{adamw_step, AdamW, AdamWConfig};
pub use params::{Fnv1a, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::{grad_enabled, no_grad, Gradients, Tensor};
