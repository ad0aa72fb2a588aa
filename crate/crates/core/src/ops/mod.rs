//! Forward and backward kernels for every operator the network uses.
//!
//! Kernels are pure functions of their inputs. Tensors are N×C×H×W.

pub mod channel;
pub mod conv;
pub mod depthwise;
pub(crate) mod gemm;
pub mod norm;
pub mod pool;
pub mod transpose;

pub use channel::{broadcast_spatial, concat_channels, conv1d_channels, scale_channels};
pub use conv::{conv2d, conv2d_direct, Conv2dParams};
pub use depthwise::{depthwise_conv2d, factored_kernel, pointwise_conv};
pub use norm::{BN_EPS, BN_MOMENTUM};
pub use pool::{avg_pool2d, global_avg_pool, global_max_pool, max_pool2d};
pub use transpose::conv_transpose2x2;

pub fn relu(x: &crate::Tensor) -> crate::Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &crate::Tensor) -> crate::Tensor {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
