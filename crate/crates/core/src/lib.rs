//! LKD-Net: single-image dehazing with decomposed large-kernel depth-wise
//! convolutions, implemented from scratch on a small NCHW tensor type with
//! reverse-mode differentiation.

pub mod analysis;
pub mod autograd;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod haze;
pub mod image;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod param;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
