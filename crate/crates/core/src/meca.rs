//! Channel attention from average- and max-pooled descriptors sharing one
//! 1-D convolution across the channel axis.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::layers::check_channels;
use crate::nn::{ParamBuilder, ParamId, Session};
use crate::ops::{self, channel};
use crate::tensor::Tensor;

/// Odd kernel nearest to `log2(C)/gamma + b/gamma`, at least 3.
pub fn meca_kernel_size(channels: usize, gamma: f64, b: f64) -> usize {
    let t = ((channels.max(1) as f64).log2() + b) / gamma;
    let k = t.floor().max(0.0) as usize;
    let k = if k % 2 == 0 { k + 1 } else { k };
    k.max(3)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MecaSpec {
    pub channels: usize,
    pub kernel: usize,
}

impl MecaSpec {
    pub fn new(channels: usize, kernel: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("meca_channels", "must be positive"));
        }
        if kernel % 2 == 0 {
            return Err(Error::config("meca_kernel", format!("{kernel} is not odd")));
        }
        Ok(Self { channels, kernel })
    }

    pub fn adaptive(channels: usize) -> Self {
        Self {
            channels,
            kernel: meca_kernel_size(channels, 2.0, 1.0),
        }
    }

    /// Kernels wider than the channel vector reach only zero padding at the
    /// outer taps.
    pub fn oversized(&self) -> bool {
        self.kernel > self.channels
    }
}

/// Intermediate values of one attention pass, for inspection.
#[derive(Clone, Debug)]
pub struct MecaDescriptors {
    pub avg: Tensor,
    pub max: Tensor,
    /// Convolved average descriptor.
    pub a: Tensor,
    /// Convolved max descriptor.
    pub m: Tensor,
    /// `sigmoid(a + m)`, shape `N×C`.
    pub weights: Tensor,
}

/// Evaluates the attention branch without recording a graph.
pub fn meca_descriptors(x: &Tensor, w: &Tensor) -> Result<MecaDescriptors> {
    let avg = ops::global_avg_pool(x)?;
    let max = ops::global_max_pool(x)?.output;
    let a = channel::conv1d_channels(&avg, w)?;
    let m = channel::conv1d_channels(&max, w)?;
    let weights = ops::sigmoid(&a.zip_map(&m, |p, q| p + q)?);
    Ok(MecaDescriptors { avg, max, a, m, weights })
}

/// `x ⊙ sigmoid(conv1d(avg(x)) + conv1d(max(x)))` on any executor.
pub fn meca_forward<G: Graph>(g: &mut G, x: &G::Node, w: &G::Node) -> Result<G::Node> {
    let avg = g.global_avg_pool(x)?;
    let max = g.global_max_pool(x)?;
    let a = g.conv1d_channels(&avg, w)?;
    let m = g.conv1d_channels(&max, w)?;
    let z = g.add(&a, &m)?;
    let s = g.sigmoid(&z);
    g.scale_channels(x, &s)
}

#[derive(Clone, Debug)]
pub struct Meca {
    pub spec: MecaSpec,
    pub weight: ParamId,
}

impl Meca {
    pub fn new(pb: &mut ParamBuilder<'_>, spec: MecaSpec) -> Self {
        Self {
            spec,
            weight: pb.he_uniform("weight", &[spec.kernel], spec.kernel),
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        check_channels("meca", self.spec.channels, s.value(x).dims4("meca")?.1)?;
        let w = s.param(self.weight);
        meca_forward(&mut s.graph, x, &w)
    }
}
