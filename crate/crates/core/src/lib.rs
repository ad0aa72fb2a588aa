//! Skin lesion segmentation with a densely connected encoder, depthwise
//! separable convolutions, multi-rate atrous pooling and channel attention.
//!
//! The numerical core is a small reverse-mode autodiff engine over dense
//! `f64` tensors in NCHW layout. Kernels parallelise over independent outputs
//! with rayon when the `parallel` feature is on and always reduce in index
//! order, so results do not depend on the thread count.

pub mod aspp;
pub mod config;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod kv;
pub mod loss;
pub mod meca;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod par;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
