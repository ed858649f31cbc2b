//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as operations execute; [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients into leaves. The op set
//! is exactly what the feedback U-Net needs: convolution, 2×2 pooling and
//! upsampling, channel concat/slice, relu, per-pixel channel softmax and
//! channel-mixing matmul, and a clamped cross-entropy.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_at, grad_check_piecewise, GradCheckError, PiecewiseCheck,
};
pub use tape::{validate_one_hot, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("validation error: {0}")]
    Validation(String),
}
