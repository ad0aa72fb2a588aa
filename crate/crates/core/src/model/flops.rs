//! Multiply-accumulate counts per convolution.

use std::fmt;

use num_integer::Integer;

use super::network::{Bridge, CascnModel};
use crate::aspp::AsppBranch;
use crate::nn::{ConvBlock, ConvMode};

/// `H·W·Dk²·N·M`.
pub fn standard_cost(h: usize, w: usize, dk: usize, n: usize, m: usize) -> u64 {
    (h * w) as u64 * (dk * dk) as u64 * n as u64 * m as u64
}

/// `H·W·N·(Dk² + M)`: depthwise then pointwise.
pub fn separable_cost(h: usize, w: usize, dk: usize, n: usize, m: usize) -> u64 {
    (h * w) as u64 * n as u64 * (dk * dk + m) as u64
}

/// Reduced fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = num.gcd(&den);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Saving of the separable factorization: `Dk²·M / (Dk² + M)`.
pub fn cost_ratio(dk: usize, m: usize) -> Ratio {
    let k2 = (dk * dk) as u64;
    Ratio::new(k2 * m as u64, k2 + m as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Standard,
    Separable,
    /// `1×1`.
    Pointwise,
    /// `2×2` stride-2 transposed; `h, w` are the input grid.
    Transposed,
}

#[derive(Clone, Debug)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub n: usize,
    pub m: usize,
    pub standard: u64,
    pub separable: u64,
    /// A block whose factorization follows the configured convolution mode.
    pub swappable: bool,
}

impl LayerCost {
    fn new(name: String, kind: LayerKind, (h, w): (usize, usize), kernel: usize, n: usize, m: usize, swappable: bool) -> Self {
        Self {
            name,
            kind,
            h,
            w,
            kernel,
            n,
            m,
            standard: standard_cost(h, w, kernel, n, m),
            separable: separable_cost(h, w, kernel, n, m),
            swappable,
        }
    }

    /// Cost of the layer as built.
    pub fn macs(&self) -> u64 {
        match self.kind {
            LayerKind::Separable => self.separable,
            _ => self.standard,
        }
    }

    /// Standard over separable cost.
    pub fn ratio(&self) -> Ratio {
        Ratio::new(self.standard, self.separable)
    }
}

#[derive(Clone, Debug)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(LayerCost::macs).sum()
    }

    pub fn swapped(&self) -> impl Iterator<Item = &LayerCost> {
        self.layers.iter().filter(|l| l.swappable)
    }
}

fn block_cost(name: String, block: &ConvBlock, hw: (usize, usize)) -> LayerCost {
    let (n, m, k) = block.dims();
    let kind = match block.mode() {
        ConvMode::Standard => LayerKind::Standard,
        ConvMode::Separable => LayerKind::Separable,
    };
    LayerCost::new(name, kind, hw, k, n, m, true)
}

/// Per-layer costs for one image at the model's working resolution.
pub fn flop_count(model: &CascnModel) -> FlopReport {
    let (h0, w0) = model.config().padded_size();
    let at = |stride: usize| (h0 / stride, w0 / stride);
    let mut layers = Vec::new();
    let enc = &model.encoder;
    let conv = &enc.stem.conv;
    layers.push(LayerCost::new(
        "encoder.stem".into(),
        LayerKind::Standard,
        at(2),
        conv.kernel,
        conv.in_channels,
        conv.out_channels,
        false,
    ));
    let mut stride = 4;
    for (b, block) in enc.blocks.iter().enumerate() {
        for (l, layer) in block.layers.iter().enumerate() {
            let name = format!("encoder.block{}.layer{}", b + 1, l + 1);
            for (suffix, c) in [("conv1", &layer.conv1), ("conv2", &layer.conv2)] {
                let kind = if c.kernel == 1 { LayerKind::Pointwise } else { LayerKind::Standard };
                layers.push(LayerCost::new(
                    format!("{name}.{suffix}"),
                    kind,
                    at(stride),
                    c.kernel,
                    c.in_channels,
                    c.out_channels,
                    false,
                ));
            }
        }
        if let Some(t) = enc.transitions.get(b) {
            layers.push(LayerCost::new(
                format!("encoder.trans{}", b + 1),
                LayerKind::Pointwise,
                at(stride),
                1,
                t.in_channels,
                t.out_channels,
                false,
            ));
            stride *= 2;
        }
    }
    let bottom = at(stride);
    layers.push(block_cost("tail".into(), &model.tail, bottom));
    if let Bridge::Aspp(aspp) = &model.bridge {
        let (cin, cout) = (aspp.spec.in_channels, aspp.spec.out_channels);
        for branch in &aspp.branches {
            layers.push(match branch {
                AsppBranch::Pointwise(_) => LayerCost::new("aspp.b1x1".into(), LayerKind::Pointwise, bottom, 1, cin, cout, false),
                AsppBranch::Atrous { rate, .. } => {
                    LayerCost::new(format!("aspp.rate{rate}"), LayerKind::Standard, bottom, 3, cin, cout, false)
                }
                AsppBranch::ImagePool(_) => LayerCost::new("aspp.pool".into(), LayerKind::Pointwise, (1, 1), 1, cin, cout, false),
            });
        }
        layers.push(LayerCost::new(
            "aspp.project".into(),
            LayerKind::Pointwise,
            bottom,
            1,
            aspp.spec.projection_in(),
            cout,
            false,
        ));
    }
    let mut grid = bottom;
    for (i, stage) in model.decoder.iter().enumerate() {
        let name = format!("decoder.stage{}", i + 1);
        layers.push(LayerCost::new(
            format!("{name}.up"),
            LayerKind::Transposed,
            grid,
            2,
            stage.up.in_channels,
            stage.up.out_channels,
            false,
        ));
        grid = (grid.0 * 2, grid.1 * 2);
        layers.push(block_cost(format!("{name}.conv1"), &stage.blocks[0], grid));
        layers.push(block_cost(format!("{name}.conv2"), &stage.blocks[1], grid));
    }
    let head = &model.head;
    layers.push(LayerCost::new(
        "head".into(),
        LayerKind::Pointwise,
        grid,
        1,
        head.in_channels,
        head.out_channels,
        false,
    ));
    FlopReport { layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        assert_eq!(standard_cost(32, 32, 3, 64, 128), 75_497_472);
        assert_eq!(separable_cost(32, 32, 3, 64, 128), 8_978_432);
        let r = cost_ratio(3, 128);
        assert_eq!((r.num, r.den), (1152, 137));
        assert_eq!(r.to_string(), "1152/137");
        assert!((r.as_f64() - 8.409).abs() < 1e-3);
        assert_eq!(Ratio::new(75_497_472, 8_978_432), r);
    }

    #[test]
    fn degenerate_ratios() {
        assert_eq!(cost_ratio(3, 9), Ratio::new(9, 2));
        assert_eq!(cost_ratio(3, 9).as_f64(), 4.5);
        let r = cost_ratio(1, 16);
        assert_eq!((r.num, r.den), (16, 17));
        assert!(r.as_f64() < 1.0);
    }
}
