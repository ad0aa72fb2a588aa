use std::sync::Arc;

use super::{BatchStats, Graph};
use crate::error::{Error, Result};
use crate::loss::{self, PixelBatch};
use crate::ops::conv::{self, Conv2dParams};
use crate::ops::{channel, depthwise, norm, pool, transpose};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, p: Conv2dParams },
    Depthwise { x: usize, w: usize, p: Conv2dParams },
    Pointwise { x: usize, w: usize, b: Option<usize> },
    ConvTranspose { x: usize, w: usize, b: Option<usize> },
    MaxPool { x: usize, argmax: Vec<usize> },
    AvgPool { x: usize, k: usize, stride: usize },
    GlobalAvg { x: usize },
    GlobalMax { x: usize, argmax: Vec<usize> },
    Conv1d { v: usize, w: usize },
    BnTrain { x: usize, gamma: usize, beta: usize, cache: norm::BatchNormCache },
    BnEval { x: usize, gamma: usize, beta: usize, xhat: Tensor, scale: Vec<f64> },
    Relu { x: usize },
    Sigmoid { x: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, k: f64 },
    Sum { x: usize },
    Reshape { x: usize },
    Concat { xs: Vec<usize>, channels: Vec<usize> },
    ScaleChannels { x: usize, s: usize },
    Broadcast { x: usize },
    Crop { x: usize },
    Bce { p: usize, target: Tensor },
    Jaccard { p: usize, target: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } | Pointwise { x, w, b } | ConvTranspose { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Depthwise { x, w, .. } => vec![*x, *w],
            MaxPool { x, .. }
            | AvgPool { x, .. }
            | GlobalAvg { x }
            | GlobalMax { x, .. }
            | Relu { x }
            | Sigmoid { x }
            | Scale { x, .. }
            | Sum { x }
            | Reshape { x }
            | Broadcast { x }
            | Crop { x } => vec![*x],
            Conv1d { v, w } => vec![*v, *w],
            BnTrain { x, gamma, beta, .. } | BnEval { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Add { a, b } | Mul { a, b } => vec![*a, *b],
            Concat { xs, .. } => xs.clone(),
            ScaleChannels { x, s } => vec![*x, *s],
            Bce { p, .. } | Jaccard { p, .. } => vec![*p],
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
    scope: usize,
}

/// Records a computation for reverse-mode differentiation. Nodes are
/// appended in execution order, so the record is topologically sorted by
/// construction.
pub struct Tape {
    nodes: Vec<Node>,
    scopes: Vec<String>,
    scope_stack: Vec<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            scopes: vec!["<root>".to_string()],
            scope_stack: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf value; `requires_grad` leaves are reported by [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Arc::new(t), requires_grad)
    }

    fn push_leaf(&mut self, t: Arc<Tensor>, requires_grad: bool) -> Var {
        let scope = *self.scope_stack.last().unwrap_or(&0);
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: requires_grad,
            scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        let scope = *self.scope_stack.last().unwrap_or(&0);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
            scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Label of the first recorded node whose value is not finite.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| self.scopes[n.scope].clone())
    }

    /// Propagates `d loss / d node` back through the record. Every node is
    /// visited at most once; gradients from fan-out are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.value.shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(g);
                continue;
            }
            for (input, dg) in self.node_backward(node, &g)? {
                if !self.nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&dg)?,
                    slot => *slot = Some(dg),
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, p } => {
                let gr = conv::conv2d_backward(self.val(*x), self.val(*w), b.is_some(), *p, g)?;
                with_bias(vec![(*x, gr.dx), (*w, gr.dw)], *b, gr.db)
            }
            Op::Depthwise { x, w, p } => {
                let (dx, dw) = depthwise::depthwise_conv2d_backward(self.val(*x), self.val(*w), *p, g)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::Pointwise { x, w, b } => {
                let gr = depthwise::pointwise_conv_backward(self.val(*x), self.val(*w), b.is_some(), g)?;
                with_bias(vec![(*x, gr.dx), (*w, gr.dw)], *b, gr.db)
            }
            Op::ConvTranspose { x, w, b } => {
                let gr = transpose::conv_transpose2x2_backward(self.val(*x), self.val(*w), b.is_some(), g)?;
                with_bias(vec![(*x, gr.dx), (*w, gr.dw)], *b, gr.db)
            }
            Op::MaxPool { x, argmax } => vec![(*x, pool::max_pool2d_backward(self.val(*x).shape(), argmax, g))],
            Op::AvgPool { x, k, stride } => {
                vec![(*x, pool::avg_pool2d_backward(self.val(*x).shape(), *k, *stride, g))]
            }
            Op::GlobalAvg { x } => vec![(*x, pool::global_avg_pool_backward(self.val(*x).shape(), g))],
            Op::GlobalMax { x, argmax } => {
                vec![(*x, pool::global_max_pool_backward(self.val(*x).shape(), argmax, g))]
            }
            Op::Conv1d { v, w } => {
                let (dv, dw) = channel::conv1d_channels_backward(self.val(*v), self.val(*w), g);
                vec![(*v, dv), (*w, dw)]
            }
            Op::BnTrain { x, gamma, beta, cache } => {
                let (dx, dg, db) = norm::batch_norm_train_backward(cache, self.val(*gamma), g);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::BnEval { x, gamma, beta, xhat, scale } => {
                let s = g.shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut dx = g.data().to_vec();
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        for i in base..base + plane {
                            dg[ci] += g.data()[i] * xhat.data()[i];
                            db[ci] += g.data()[i];
                            dx[i] *= scale[ci];
                        }
                    }
                }
                vec![
                    (*x, Tensor::from_parts(s.to_vec(), dx)),
                    (*gamma, Tensor::from_parts(vec![c], dg)),
                    (*beta, Tensor::from_parts(vec![c], db)),
                ]
            }
            Op::Relu { x } => vec![(*x, g.zip_map(self.val(*x), |g, v| if v > 0.0 { g } else { 0.0 })?)],
            Op::Sigmoid { x } => vec![(*x, g.zip_map(out, |g, s| g * s * (1.0 - s))?)],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => vec![
                (*a, g.zip_map(self.val(*b), |g, v| g * v)?),
                (*b, g.zip_map(self.val(*a), |g, v| g * v)?),
            ],
            Op::Scale { x, k } => vec![(*x, g.map(|v| v * k))],
            Op::Sum { x } => {
                let gv = g.data()[0];
                vec![(*x, Tensor::full(self.val(*x).shape().to_vec(), gv))]
            }
            Op::Reshape { x } => vec![(*x, g.reshape(self.val(*x).shape().to_vec())?)],
            Op::Concat { xs, channels } => xs.iter().copied().zip(channel::split_channels(g, channels)).collect(),
            Op::ScaleChannels { x, s } => {
                let (dx, ds) = channel::scale_channels_backward(self.val(*x), self.val(*s), g);
                vec![(*x, dx), (*s, ds)]
            }
            Op::Broadcast { x } => vec![(*x, channel::broadcast_spatial_backward(g))],
            Op::Crop { x } => vec![(*x, channel::crop_spatial_backward(self.nodes[*x].value.shape(), g))],
            Op::Bce { p, target } => {
                let pv = self.val(*p);
                let d = loss::bce_grad(PixelBatch::new(pv.data(), target.data())?);
                vec![(*p, scaled(pv.shape(), d, g.data()[0]))]
            }
            Op::Jaccard { p, target } => {
                let pv = self.val(*p);
                let d = loss::jaccard_grad(PixelBatch::new(pv.data(), target.data())?);
                vec![(*p, scaled(pv.shape(), d, g.data()[0]))]
            }
        })
    }

    fn push_conv_like(
        &mut self,
        value: Tensor,
        make: impl FnOnce(usize, usize, Option<usize>) -> Op,
        x: Var,
        w: Var,
        b: Option<&Var>,
    ) -> Var {
        let op = make(x.0, w.0, b.map(|b| b.0));
        self.push(value, op)
    }
}

fn with_bias(mut v: Vec<(usize, Tensor)>, b: Option<usize>, db: Option<Tensor>) -> Vec<(usize, Tensor)> {
    if let (Some(b), Some(db)) = (b, db) {
        v.push((b, db));
    }
    v
}

fn scaled(shape: &[usize], d: Vec<f64>, k: f64) -> Tensor {
    Tensor::from_parts(shape.to_vec(), d.into_iter().map(|v| v * k).collect())
}

/// Gradients of the leaves that asked for them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph for Tape {
    type Node = Var;

    fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn parameter(&mut self, t: Arc<Tensor>) -> Var {
        self.push_leaf(t, true)
    }

    fn value<'a>(&'a self, n: &'a Var) -> &'a Tensor {
        &self.nodes[n.0].value
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, p: Conv2dParams) -> Result<Var> {
        let y = conv::conv2d(self.val(x.0), self.val(w.0), b.map(|b| self.val(b.0)), p)?;
        Ok(self.push_conv_like(y, |x, w, b| Op::Conv2d { x, w, b, p }, *x, *w, b))
    }

    fn depthwise_conv2d(&mut self, x: &Var, w: &Var, p: Conv2dParams) -> Result<Var> {
        let y = depthwise::depthwise_conv2d(self.val(x.0), self.val(w.0), p)?;
        Ok(self.push(y, Op::Depthwise { x: x.0, w: w.0, p }))
    }

    fn pointwise_conv(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = depthwise::pointwise_conv(self.val(x.0), self.val(w.0), b.map(|b| self.val(b.0)))?;
        Ok(self.push_conv_like(y, |x, w, b| Op::Pointwise { x, w, b }, *x, *w, b))
    }

    fn conv_transpose2x2(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = transpose::conv_transpose2x2(self.val(x.0), self.val(w.0), b.map(|b| self.val(b.0)))?;
        Ok(self.push_conv_like(y, |x, w, b| Op::ConvTranspose { x, w, b }, *x, *w, b))
    }

    fn max_pool2d(&mut self, x: &Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let p = pool::max_pool2d(self.val(x.0), k, stride, padding)?;
        Ok(self.push(p.output, Op::MaxPool { x: x.0, argmax: p.argmax }))
    }

    fn avg_pool2d(&mut self, x: &Var, k: usize, stride: usize) -> Result<Var> {
        let y = pool::avg_pool2d(self.val(x.0), k, stride)?;
        Ok(self.push(y, Op::AvgPool { x: x.0, k, stride }))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let y = pool::global_avg_pool(self.val(x.0))?;
        Ok(self.push(y, Op::GlobalAvg { x: x.0 }))
    }

    fn global_max_pool(&mut self, x: &Var) -> Result<Var> {
        let p = pool::global_max_pool(self.val(x.0))?;
        Ok(self.push(p.output, Op::GlobalMax { x: x.0, argmax: p.argmax }))
    }

    fn conv1d_channels(&mut self, v: &Var, w: &Var) -> Result<Var> {
        let y = channel::conv1d_channels(self.val(v.0), self.val(w.0))?;
        Ok(self.push(y, Op::Conv1d { v: v.0, w: w.0 }))
    }

    fn batch_norm_train(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xv = self.val(x.0);
        let s = xv.shape();
        let count = s[0] * s.get(2).unwrap_or(&1) * s.get(3).unwrap_or(&1);
        let (y, cache) = norm::batch_norm_train(xv, self.val(gamma.0), self.val(beta.0), eps)?;
        let stats = BatchStats {
            mean: cache.mean.clone(),
            var: cache.var.clone(),
            count,
        };
        let v = self.push(
            y,
            Op::BnTrain {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                cache,
            },
        );
        Ok((v, stats))
    }

    fn batch_norm_eval(&mut self, x: &Var, gamma: &Var, beta: &Var, rm: &Tensor, rv: &Tensor, eps: f64) -> Result<Var> {
        let xv = self.val(x.0);
        let y = norm::batch_norm_eval(xv, self.val(gamma.0), self.val(beta.0), rm, rv, eps)?;
        // x̂ under running statistics, for the affine-parameter gradients
        let ones = Tensor::ones([rm.numel()]);
        let zeros = Tensor::zeros([rm.numel()]);
        let xhat = norm::batch_norm_eval(xv, &ones, &zeros, rm, rv, eps)?;
        let scale = self
            .val(gamma.0)
            .data()
            .iter()
            .zip(rv.data())
            .map(|(g, v)| g / (v + eps).sqrt())
            .collect();
        Ok(self.push(
            y,
            Op::BnEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                scale,
            },
        ))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = crate::ops::relu(self.val(x.0));
        self.push(y, Op::Relu { x: x.0 })
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let y = crate::ops::sigmoid(self.val(x.0));
        self.push(y, Op::Sigmoid { x: x.0 })
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(a.0).zip_map(self.val(b.0), |a, b| a + b)?;
        Ok(self.push(y, Op::Add { a: a.0, b: b.0 }))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(a.0).zip_map(self.val(b.0), |a, b| a * b)?;
        Ok(self.push(y, Op::Mul { a: a.0, b: b.0 }))
    }

    fn scale(&mut self, x: &Var, k: f64) -> Var {
        let y = self.val(x.0).map(|v| v * k);
        self.push(y, Op::Scale { x: x.0, k })
    }

    fn sum(&mut self, x: &Var) -> Var {
        let y = Tensor::scalar(self.val(x.0).sum());
        self.push(y, Op::Sum { x: x.0 })
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let y = self.val(x.0).reshape(shape.to_vec())?;
        Ok(self.push(y, Op::Reshape { x: x.0 }))
    }

    fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = xs.iter().map(|v| self.val(v.0)).collect();
        let y = channel::concat_channels(&vals)?;
        let channels = vals.iter().map(|t| t.shape()[1]).collect();
        Ok(self.push(
            y,
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
                channels,
            },
        ))
    }

    fn scale_channels(&mut self, x: &Var, s: &Var) -> Result<Var> {
        let y = channel::scale_channels(self.val(x.0), self.val(s.0))?;
        Ok(self.push(y, Op::ScaleChannels { x: x.0, s: s.0 }))
    }

    fn broadcast_spatial(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let y = channel::broadcast_spatial(self.val(x.0), h, w)?;
        Ok(self.push(y, Op::Broadcast { x: x.0 }))
    }

    fn crop_spatial(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        let y = channel::crop_spatial(self.val(x.0), h, w)?;
        Ok(self.push(y, Op::Crop { x: x.0 }))
    }

    fn bce_loss(&mut self, p: &Var, target: &Tensor) -> Result<Var> {
        let pv = self.val(p.0);
        pv.expect_same_shape(target, "bce_loss")?;
        let l = loss::bce_loss(PixelBatch::new(pv.data(), target.data())?);
        Ok(self.push(
            Tensor::scalar(l),
            Op::Bce {
                p: p.0,
                target: target.clone(),
            },
        ))
    }

    fn jaccard_loss(&mut self, p: &Var, target: &Tensor) -> Result<Var> {
        let pv = self.val(p.0);
        pv.expect_same_shape(target, "jaccard_loss")?;
        let l = loss::jaccard_loss(PixelBatch::new(pv.data(), target.data())?);
        Ok(self.push(
            Tensor::scalar(l),
            Op::Jaccard {
                p: p.0,
                target: target.clone(),
            },
        ))
    }

    fn enter_scope(&mut self, name: &str) {
        let parent = *self.scope_stack.last().unwrap_or(&0);
        let full = if parent == 0 {
            name.to_string()
        } else {
            format!("{}.{name}", self.scopes[parent])
        };
        self.scopes.push(full);
        self.scope_stack.push(self.scopes.len() - 1);
    }

    fn exit_scope(&mut self) {
        if self.scope_stack.len() > 1 {
            self.scope_stack.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap(), true);
        let s = t.sum(&x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), [1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut t = Tape::new();
        let xv = Tensor::new([4], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let x = t.leaf(xv.clone(), true);
        // x used twice: gradients from both operands accumulate
        let sq = t.mul(&x, &x).unwrap();
        let s = t.sum(&sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv.map(|v| 2.0 * v));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones([3]), true);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones([2]), true);
        let c = t.input(Tensor::full([2], 3.0));
        let y = t.mul(&x, &c).unwrap();
        let s = t.sum(&y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), [3.0, 3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn scopes_label_non_finite_nodes() {
        let mut t = Tape::new();
        t.enter_scope("encoder");
        let x = t.input(Tensor::ones([1]));
        t.exit_scope();
        t.enter_scope("decoder");
        t.enter_scope("blowup");
        let _ = t.scale(&x, f64::INFINITY);
        t.exit_scope();
        t.exit_scope();
        assert_eq!(t.first_non_finite().as_deref(), Some("decoder.blowup"));
    }
}
