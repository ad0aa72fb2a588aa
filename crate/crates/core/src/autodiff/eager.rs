use std::sync::Arc;

use super::{BatchStats, Graph};
use crate::error::Result;
use crate::loss::{self, PixelBatch};
use crate::ops::conv::{self, Conv2dParams};
use crate::ops::{channel, depthwise, norm, pool, transpose};
use crate::tensor::Tensor;

/// Evaluates operations immediately without recording anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

type Node = Arc<Tensor>;

fn node(t: Tensor) -> Node {
    Arc::new(t)
}

impl Graph for Eager {
    type Node = Node;

    fn input(&mut self, t: Tensor) -> Node {
        node(t)
    }

    fn parameter(&mut self, t: Arc<Tensor>) -> Node {
        t
    }

    fn value<'a>(&'a self, n: &'a Node) -> &'a Tensor {
        n
    }

    fn conv2d(&mut self, x: &Node, w: &Node, b: Option<&Node>, p: Conv2dParams) -> Result<Node> {
        conv::conv2d(x, w, b.map(|b| &**b), p).map(node)
    }

    fn depthwise_conv2d(&mut self, x: &Node, w: &Node, p: Conv2dParams) -> Result<Node> {
        depthwise::depthwise_conv2d(x, w, p).map(node)
    }

    fn pointwise_conv(&mut self, x: &Node, w: &Node, b: Option<&Node>) -> Result<Node> {
        depthwise::pointwise_conv(x, w, b.map(|b| &**b)).map(node)
    }

    fn conv_transpose2x2(&mut self, x: &Node, w: &Node, b: Option<&Node>) -> Result<Node> {
        transpose::conv_transpose2x2(x, w, b.map(|b| &**b)).map(node)
    }

    fn max_pool2d(&mut self, x: &Node, k: usize, stride: usize, padding: usize) -> Result<Node> {
        Ok(node(pool::max_pool2d(x, k, stride, padding)?.output))
    }

    fn avg_pool2d(&mut self, x: &Node, k: usize, stride: usize) -> Result<Node> {
        pool::avg_pool2d(x, k, stride).map(node)
    }

    fn global_avg_pool(&mut self, x: &Node) -> Result<Node> {
        pool::global_avg_pool(x).map(node)
    }

    fn global_max_pool(&mut self, x: &Node) -> Result<Node> {
        Ok(node(pool::global_max_pool(x)?.output))
    }

    fn conv1d_channels(&mut self, v: &Node, w: &Node) -> Result<Node> {
        channel::conv1d_channels(v, w).map(node)
    }

    fn batch_norm_train(&mut self, x: &Node, gamma: &Node, beta: &Node, eps: f64) -> Result<(Node, BatchStats)> {
        let s = x.shape();
        let count = s[0] * s.get(2).unwrap_or(&1) * s.get(3).unwrap_or(&1);
        let (y, cache) = norm::batch_norm_train(x, gamma, beta, eps)?;
        Ok((
            node(y),
            BatchStats {
                mean: cache.mean,
                var: cache.var,
                count,
            },
        ))
    }

    fn batch_norm_eval(&mut self, x: &Node, gamma: &Node, beta: &Node, rm: &Tensor, rv: &Tensor, eps: f64) -> Result<Node> {
        norm::batch_norm_eval(x, gamma, beta, rm, rv, eps).map(node)
    }

    fn relu(&mut self, x: &Node) -> Node {
        node(crate::ops::relu(x))
    }

    fn sigmoid(&mut self, x: &Node) -> Node {
        node(crate::ops::sigmoid(x))
    }

    fn add(&mut self, a: &Node, b: &Node) -> Result<Node> {
        a.zip_map(b, |a, b| a + b).map(node)
    }

    fn mul(&mut self, a: &Node, b: &Node) -> Result<Node> {
        a.zip_map(b, |a, b| a * b).map(node)
    }

    fn scale(&mut self, x: &Node, k: f64) -> Node {
        node(x.map(|v| v * k))
    }

    fn sum(&mut self, x: &Node) -> Node {
        node(Tensor::scalar(x.sum()))
    }

    fn reshape(&mut self, x: &Node, shape: &[usize]) -> Result<Node> {
        x.reshape(shape.to_vec()).map(node)
    }

    fn concat_channels(&mut self, xs: &[Node]) -> Result<Node> {
        let refs: Vec<&Tensor> = xs.iter().map(|x| &**x).collect();
        channel::concat_channels(&refs).map(node)
    }

    fn scale_channels(&mut self, x: &Node, s: &Node) -> Result<Node> {
        channel::scale_channels(x, s).map(node)
    }

    fn broadcast_spatial(&mut self, x: &Node, h: usize, w: usize) -> Result<Node> {
        channel::broadcast_spatial(x, h, w).map(node)
    }

    fn crop_spatial(&mut self, x: &Node, h: usize, w: usize) -> Result<Node> {
        channel::crop_spatial(x, h, w).map(node)
    }

    fn bce_loss(&mut self, p: &Node, target: &Tensor) -> Result<Node> {
        p.expect_same_shape(target, "bce_loss")?;
        let l = loss::bce_loss(PixelBatch::new(p.data(), target.data())?);
        Ok(node(Tensor::scalar(l)))
    }

    fn jaccard_loss(&mut self, p: &Node, target: &Tensor) -> Result<Node> {
        p.expect_same_shape(target, "jaccard_loss")?;
        let l = loss::jaccard_loss(PixelBatch::new(p.data(), target.data())?);
        Ok(node(Tensor::scalar(l)))
    }
}
