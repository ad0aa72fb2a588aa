//! Reverse-mode differentiation.
//!
//! Layers are written once against the [`Graph`] trait and run on either of
//! two executors:
//!
//! * [`Tape`] records every operation together with the activations its
//!   backward pass needs, then replays the record in reverse in
//!   [`Tape::backward`];
//! * [`Eager`] evaluates immediately and keeps nothing, so intermediate
//!   activations are freed as soon as they go out of scope. It is the
//!   inference path.

mod eager;
mod gradcheck;
mod tape;

use std::sync::Arc;

pub use eager::Eager;
pub use gradcheck::{directional_check, grad_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

use crate::error::Result;
use crate::ops::conv::Conv2dParams;
use crate::tensor::Tensor;

/// Batch statistics produced by a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance over N×H×W.
    pub var: Vec<f64>,
    /// Number of values each statistic was computed from.
    pub count: usize,
}

/// The operator set shared by the recording and eager executors. Shapes
/// follow the kernels in [`crate::ops`].
pub trait Graph {
    type Node: Clone;

    /// A constant input; never receives a gradient.
    fn input(&mut self, t: Tensor) -> Self::Node;
    /// A trainable parameter; receives a gradient on a tape.
    fn parameter(&mut self, t: Arc<Tensor>) -> Self::Node;
    fn value<'a>(&'a self, n: &'a Self::Node) -> &'a Tensor;

    fn conv2d(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>, p: Conv2dParams) -> Result<Self::Node>;
    fn depthwise_conv2d(&mut self, x: &Self::Node, w: &Self::Node, p: Conv2dParams) -> Result<Self::Node>;
    fn pointwise_conv(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>) -> Result<Self::Node>;
    fn conv_transpose2x2(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>) -> Result<Self::Node>;

    fn max_pool2d(&mut self, x: &Self::Node, k: usize, stride: usize, padding: usize) -> Result<Self::Node>;
    fn avg_pool2d(&mut self, x: &Self::Node, k: usize, stride: usize) -> Result<Self::Node>;
    fn global_avg_pool(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn global_max_pool(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn conv1d_channels(&mut self, v: &Self::Node, w: &Self::Node) -> Result<Self::Node>;

    fn batch_norm_train(&mut self, x: &Self::Node, gamma: &Self::Node, beta: &Self::Node, eps: f64)
        -> Result<(Self::Node, BatchStats)>;
    #[allow(clippy::too_many_arguments)]
    fn batch_norm_eval(
        &mut self,
        x: &Self::Node,
        gamma: &Self::Node,
        beta: &Self::Node,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Self::Node>;

    fn relu(&mut self, x: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, x: &Self::Node, k: f64) -> Self::Node;
    /// Sum of all elements, as a one-element tensor.
    fn sum(&mut self, x: &Self::Node) -> Self::Node;
    fn reshape(&mut self, x: &Self::Node, shape: &[usize]) -> Result<Self::Node>;

    fn concat_channels(&mut self, xs: &[Self::Node]) -> Result<Self::Node>;
    fn scale_channels(&mut self, x: &Self::Node, s: &Self::Node) -> Result<Self::Node>;
    fn broadcast_spatial(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;
    /// Top-left `h×w` window.
    fn crop_spatial(&mut self, x: &Self::Node, h: usize, w: usize) -> Result<Self::Node>;

    fn bce_loss(&mut self, p: &Self::Node, target: &Tensor) -> Result<Self::Node>;
    fn jaccard_loss(&mut self, p: &Self::Node, target: &Tensor) -> Result<Self::Node>;

    /// Labels subsequently recorded nodes, for diagnostics.
    fn enter_scope(&mut self, _name: &str) {}
    fn exit_scope(&mut self) {}

    /// Cross-entropy plus Jaccard distance.
    fn seg_loss(&mut self, p: &Self::Node, target: &Tensor) -> Result<Self::Node> {
        let ce = self.bce_loss(p, target)?;
        let jd = self.jaccard_loss(p, target)?;
        self.add(&ce, &jd)
    }
}
