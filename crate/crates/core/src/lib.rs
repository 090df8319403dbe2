//! DF-Conformer speech enhancement.
//!
//! A trainable filterbank encodes the noisy waveform into non-negative
//! frames, a mask predictor built from residual blocks estimates speech and
//! noise masks, and a shared decoder resynthesizes both estimates before a
//! mixture-consistency projection. Mask predictors can use TDCN, Conformer,
//! FAVOR+ Conformer, dilated FAVOR+ Conformer or Conv-Tasformer blocks.
//!
//! Everything is generic over the scalar type ([`Scalar`]: `f32` or `f64`);
//! the aliases at the crate root pick a concrete width.

pub mod attention;
pub mod autograd;
pub mod blocks;
pub mod error;
pub mod filterbank;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use autograd::Var;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
