//! Differentiable morphological layers for neural networks.
//!
//! The crate provides classical binary and grayscale morphology
//! ([`morph`]), trainable hit-or-miss, soft hit-or-miss and generalized
//! convolution layers ([`layers`]), variance-based initializers ([`init`]),
//! data loading ([`data`]) and a small training stack ([`train`]).
//!
//! Everything numeric is generic over [`Scalar`], implemented for `f32` and
//! `f64`.

// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod init;
pub mod layers;
pub mod morph;
pub mod pgm;
pub mod rng;
pub mod scalar;
mod serde_f64;
pub mod smooth;
pub mod tensor;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use rng::{Rng, RngState};
pub use scalar::Scalar;
pub use tensor::{ReduceOp, Reduced, Tensor};
pub use window::{window_view, Padding, Window2d};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
