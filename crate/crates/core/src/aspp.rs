//! Parallel atrous convolutions plus image-level pooling, concatenated and
//! projected.

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::layers::check_channels;
use crate::nn::{ConvBnRelu, ParamBuilder, Session};
use crate::ops::Conv2dParams;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AsppSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Dilation of each 3×3 branch.
    pub rates: Vec<usize>,
    pub include_1x1: bool,
    pub include_image_pool: bool,
}

impl AsppSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("aspp_channels", "channel counts must be positive"));
        }
        if self.rates.iter().any(|&r| r == 0) {
            return Err(Error::config("aspp_rates", "rates must be at least 1"));
        }
        let mut sorted = self.rates.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.rates.len() {
            return Err(Error::config("aspp_rates", "rates must be distinct"));
        }
        if self.branch_count() == 0 {
            return Err(Error::config("aspp_rates", "no branches enabled"));
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        self.rates.len() + usize::from(self.include_1x1) + usize::from(self.include_image_pool)
    }

    pub fn projection_in(&self) -> usize {
        self.branch_count() * self.out_channels
    }
}

#[derive(Clone, Debug)]
pub enum AsppBranch {
    Pointwise(ConvBnRelu),
    Atrous { rate: usize, block: ConvBnRelu },
    ImagePool(ConvBnRelu),
}

#[derive(Clone, Debug)]
pub struct Aspp {
    pub spec: AsppSpec,
    pub branches: Vec<AsppBranch>,
    pub projection: ConvBnRelu,
}

impl Aspp {
    pub fn new(pb: &mut ParamBuilder<'_>, spec: AsppSpec) -> Result<Self> {
        spec.validate()?;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let mut branches = Vec::with_capacity(spec.branch_count());
        if spec.include_1x1 {
            branches.push(AsppBranch::Pointwise(ConvBnRelu::new(
                &mut pb.sub("b1x1"),
                cin,
                cout,
                1,
                Conv2dParams::default(),
            )));
        }
        for &rate in &spec.rates {
            let block = ConvBnRelu::new(&mut pb.sub(&format!("rate{rate}")), cin, cout, 3, Conv2dParams::same(3, rate));
            branches.push(AsppBranch::Atrous { rate, block });
        }
        if spec.include_image_pool {
            branches.push(AsppBranch::ImagePool(ConvBnRelu::new(
                &mut pb.sub("pool"),
                cin,
                cout,
                1,
                Conv2dParams::default(),
            )));
        }
        let projection = ConvBnRelu::new(&mut pb.sub("project"), spec.projection_in(), cout, 1, Conv2dParams::default());
        Ok(Self {
            spec,
            branches,
            projection,
        })
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &G::Node) -> Result<G::Node> {
        let (_, c, h, w) = s.value(x).dims4("aspp")?;
        check_channels("aspp", self.spec.in_channels, c)?;
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = match branch {
                AsppBranch::Pointwise(b) => s.scoped("b1x1", |s| b.forward(s, x))?,
                AsppBranch::Atrous { rate, block } => s.scoped(&format!("rate{rate}"), |s| block.forward(s, x))?,
                AsppBranch::ImagePool(b) => s.scoped("pool", |s| {
                    let p = s.graph.global_avg_pool(x)?;
                    let p = s.graph.reshape(&p, &[s.value(&p).shape()[0], c, 1, 1])?;
                    let p = b.forward(s, &p)?;
                    s.graph.broadcast_spatial(&p, h, w)
                })?,
            };
            outs.push(y);
        }
        let cat = s.graph.concat_channels(&outs)?;
        s.scoped("project", |s| self.projection.forward(s, &cat))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Eager;
    use crate::nn::{Mode, ParamStore};
    use crate::ops::conv2d;
    use crate::Tensor;

    fn spec(rates: Vec<usize>) -> AsppSpec {
        AsppSpec {
            in_channels: 4,
            out_channels: 8,
            rates,
            include_1x1: true,
            include_image_pool: true,
        }
    }

    #[test]
    fn branch_arithmetic() {
        let s = spec(vec![1, 2, 3]);
        assert_eq!(s.branch_count(), 5);
        assert_eq!(s.projection_in(), 40);
        assert!(spec(vec![2, 2]).validate().is_err());
        assert!(spec(vec![0]).validate().is_err());
        let empty = AsppSpec {
            include_1x1: false,
            include_image_pool: false,
            ..spec(vec![])
        };
        assert!(matches!(empty.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn preserves_spatial_dims() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let aspp = Aspp::new(&mut ParamBuilder::new(&mut store, &mut rng), spec(vec![6, 12, 18])).unwrap();
        let x = Tensor::uniform([2, 4, 12, 16], -1.0, 1.0, &mut rng);
        for mode in [Mode::Eval, Mode::Train] {
            let mut s = Session::new(Eager, &store, mode);
            let xn = s.graph.input(x.clone());
            let y = aspp.forward(&mut s, &xn).unwrap();
            assert_eq!(y.shape(), &[2, 8, 12, 16]);
        }
    }

    #[test]
    fn rate_one_branch_is_plain_conv() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let aspp = Aspp::new(&mut ParamBuilder::new(&mut store, &mut rng), spec(vec![1])).unwrap();
        let AsppBranch::Atrous { block, .. } = &aspp.branches[1] else {
            panic!("expected atrous branch")
        };
        let x = Tensor::uniform([1, 4, 7, 9], -1.0, 1.0, &mut rng);
        let w = store.get(block.conv.weight);
        let got = conv2d(&x, w, None, block.conv.params).unwrap();
        let want = conv2d(&x, w, None, Conv2dParams::new(1, 1, 1)).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }
}
