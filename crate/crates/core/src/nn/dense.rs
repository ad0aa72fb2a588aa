//! Densely connected encoder blocks.

use super::layers::{check_channels, BatchNorm2d, Conv2d};
use super::params::ParamBuilder;
use super::session::Session;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::ops::Conv2dParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseBlockSpec {
    pub num_layers: usize,
    pub growth_rate: usize,
    pub bottleneck_factor: usize,
}

impl DenseBlockSpec {
    pub fn output_channels(&self, input: usize) -> usize {
        input + self.num_layers * self.growth_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionSpec {
    /// Compression factor in `(0, 1]`.
    pub compression: f64,
}

impl TransitionSpec {
    pub fn output_channels(&self, input: usize) -> Result<usize> {
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::config("compression", format!("{} is outside (0, 1]", self.compression)));
        }
        Ok(((input as f64) * self.compression).floor() as usize)
    }
}

/// BN, ReLU, 1×1 bottleneck, BN, ReLU, 3×3 producing `growth_rate` new
/// maps, appended to the input.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub norm1: BatchNorm2d,
    pub conv1: Conv2d,
    pub norm2: BatchNorm2d,
    pub conv2: Conv2d,
}

impl DenseLayer {
    pub fn new(pb: &mut ParamBuilder<'_>, in_channels: usize, spec: &DenseBlockSpec) -> Self {
        let mid = spec.bottleneck_factor * spec.growth_rate;
        Self {
            norm1: BatchNorm2d::new(&mut pb.sub("bn1"), in_channels),
            conv1: Conv2d::new(&mut pb.sub("conv1"), in_channels, mid, 1, Conv2dParams::default(), false),
            norm2: BatchNorm2d::new(&mut pb.sub("bn2"), mid),
            conv2: Conv2d::new(&mut pb.sub("conv2"), mid, spec.growth_rate, 3, Conv2dParams::same(3, 1), false),
        }
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let fresh = self.new_features(s, x)?;
        s.graph.concat_channels(&[x.clone(), fresh])
    }

    pub fn new_features<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        check_channels("dense_layer", self.conv1.in_channels, s.value(x).dims4("dense_layer")?.1)?;
        let y = self.norm1.forward(s, x)?;
        let y = s.graph.relu(&y);
        let y = self.conv1.forward(s, &y)?;
        let y = self.norm2.forward(s, &y)?;
        let y = s.graph.relu(&y);
        self.conv2.forward(s, &y)
    }
}

/// Every layer sees the concatenation of the block input and all earlier
/// layer outputs.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub spec: DenseBlockSpec,
    pub in_channels: usize,
    pub layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, in_channels: usize, spec: DenseBlockSpec) -> Self {
        let layers = (0..spec.num_layers)
            .map(|l| DenseLayer::new(&mut pb.sub(&format!("layer{}", l + 1)), in_channels + l * spec.growth_rate, &spec))
            .collect();
        Self {
            spec,
            in_channels,
            layers,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.spec.output_channels(self.in_channels)
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let mut current = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            current = s.scoped(&format!("layer{}", l + 1), |s| layer.forward(s, &current))?;
        }
        Ok(current)
    }
}

/// BN, ReLU, 1×1 compression, 2×2 average pool.
#[derive(Clone, Debug)]
pub struct Transition {
    pub norm: BatchNorm2d,
    pub conv: Conv2d,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Transition {
    pub fn new(pb: &mut ParamBuilder<'_>, in_channels: usize, spec: TransitionSpec) -> Result<Self> {
        let out_channels = spec.output_channels(in_channels)?;
        Ok(Self {
            norm: BatchNorm2d::new(&mut pb.sub("bn"), in_channels),
            conv: Conv2d::new(&mut pb.sub("conv"), in_channels, out_channels, 1, Conv2dParams::default(), false),
            in_channels,
            out_channels,
        })
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let y = self.norm.forward(s, x)?;
        let y = s.graph.relu(&y);
        let y = self.conv.forward(s, &y)?;
        s.graph.avg_pool2d(&y, 2, 2)
    }
}
