//! Parameterized building blocks, generic over the executor.

use super::params::{ParamBuilder, ParamId};
use super::session::{Mode, RunningUpdate, Session};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::ops::{Conv2dParams, BN_EPS};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub params: Conv2dParams,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        params: Conv2dParams,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = pb.he_uniform("weight", &[out_channels, in_channels, kernel, kernel], fan_in);
        let bias = bias.then(|| pb.constant("bias", &[out_channels], 0.0));
        Self::from_parts(weight, bias, params, in_channels, out_channels, kernel)
    }

    /// Biased conv with small weights (`std`) for a classifier head, so the
    /// untrained network starts out undecided.
    pub fn head(pb: &mut ParamBuilder<'_>, in_channels: usize, out_channels: usize, kernel: usize, std: f64) -> Self {
        let weight = pb.uniform("weight", &[out_channels, in_channels, kernel, kernel], std * 3f64.sqrt());
        let bias = Some(pb.constant("bias", &[out_channels], 0.0));
        let params = Conv2dParams::same(kernel, 1);
        Self::from_parts(weight, bias, params, in_channels, out_channels, kernel)
    }

    fn from_parts(
        weight: ParamId,
        bias: Option<ParamId>,
        params: Conv2dParams,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        Self {
            weight,
            bias,
            params,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        if self.kernel == 1 && self.params == Conv2dParams::default() {
            s.graph.pointwise_conv(x, &w, b.as_ref())
        } else {
            s.graph.conv2d(x, &w, b.as_ref(), self.params)
        }
    }
}

/// Per-channel normalization with learned affine and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self {
            gamma: pb.constant("gamma", &[channels], 1.0),
            beta: pb.constant("beta", &[channels], 0.0),
            running_mean: pb.buffer("running_mean", &[channels], 0.0),
            running_var: pb.buffer("running_var", &[channels], 1.0),
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, &gamma, &beta, BN_EPS)?;
                s.record_update(RunningUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    stats,
                });
                Ok(y)
            }
            Mode::Eval => {
                let store = s.store();
                let rm = store.get(self.running_mean).clone();
                let rv = store.get(self.running_var).clone();
                s.graph.batch_norm_eval(x, &gamma, &beta, &rm, &rv, BN_EPS)
            }
        }
    }
}

/// Convolution, normalization, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub norm: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(pb: &mut ParamBuilder<'_>, in_channels: usize, out_channels: usize, kernel: usize, params: Conv2dParams) -> Self {
        Self {
            conv: Conv2d::new(&mut pb.sub("conv"), in_channels, out_channels, kernel, params, false),
            norm: BatchNorm2d::new(&mut pb.sub("bn"), out_channels),
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let y = self.conv.forward(s, x)?;
        let y = self.norm.forward(s, &y)?;
        Ok(s.graph.relu(&y))
    }
}

/// Depthwise `Dk×Dk` filter per channel, then a `1×1` mix to `M` channels,
/// then normalization and ReLU.
#[derive(Clone, Debug)]
pub struct SeparableBlock {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub norm: BatchNorm2d,
    pub params: Conv2dParams,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl SeparableBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let depthwise = pb.he_uniform("depthwise", &[in_channels, 1, kernel, kernel], kernel * kernel);
        let pointwise = pb.he_uniform("pointwise", &[out_channels, in_channels, 1, 1], in_channels);
        Self {
            depthwise,
            pointwise,
            norm: BatchNorm2d::new(&mut pb.sub("bn"), out_channels),
            params: Conv2dParams::same(kernel, 1),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let dw = s.param(self.depthwise);
        let pw = s.param(self.pointwise);
        let y = s.graph.depthwise_conv2d(x, &dw, self.params)?;
        let y = s.graph.pointwise_conv(&y, &pw, None)?;
        let y = self.norm.forward(s, &y)?;
        Ok(s.graph.relu(&y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// Full `Dk×Dk×N×M` convolutions.
    Standard,
    /// Depthwise separable factorization.
    Separable,
}

impl ConvMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvMode::Standard => "standard",
            ConvMode::Separable => "separable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(ConvMode::Standard),
            "separable" => Some(ConvMode::Separable),
            _ => None,
        }
    }
}

/// A same-size convolution block whose factorization is chosen at build time.
#[derive(Clone, Debug)]
pub enum ConvBlock {
    Standard(ConvBnRelu),
    Separable(SeparableBlock),
}

impl ConvBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, mode: ConvMode, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        match mode {
            ConvMode::Standard => ConvBlock::Standard(ConvBnRelu::new(
                pb,
                in_channels,
                out_channels,
                kernel,
                Conv2dParams::same(kernel, 1),
            )),
            ConvMode::Separable => ConvBlock::Separable(SeparableBlock::new(pb, in_channels, out_channels, kernel)),
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        match self {
            ConvBlock::Standard(b) => b.forward(s, x),
            ConvBlock::Separable(b) => b.forward(s, x),
        }
    }

    pub fn mode(&self) -> ConvMode {
        match self {
            ConvBlock::Standard(_) => ConvMode::Standard,
            ConvBlock::Separable(_) => ConvMode::Separable,
        }
    }

    /// `(in, out, kernel)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            ConvBlock::Standard(b) => (b.conv.in_channels, b.conv.out_channels, b.conv.kernel),
            ConvBlock::Separable(b) => (b.in_channels, b.out_channels, b.kernel),
        }
    }
}

/// `2×2` stride-2 transposed convolution with bias.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Upsample {
    pub fn new(pb: &mut ParamBuilder<'_>, in_channels: usize, out_channels: usize) -> Self {
        Self {
            weight: pb.lecun_uniform("weight", &[in_channels, out_channels, 2, 2], in_channels),
            bias: pb.constant("bias", &[out_channels], 0.0),
            in_channels,
            out_channels,
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.conv_transpose2x2(x, &w, Some(&b))
    }
}

pub(crate) fn check_channels(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dim(op, "channels", format!("expected {expected}, got {got}")));
    }
    Ok(())
}
