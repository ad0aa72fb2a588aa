use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, SKIP_COUNT};
use crate::aspp::Aspp;
use crate::autodiff::{Eager, Graph};
use crate::error::{Error, Result};
use crate::meca::Meca;
use crate::nn::{
    BatchNorm2d, Conv2d, ConvBlock, ConvBnRelu, DenseBlock, DenseBlockSpec, Mode, ParamBuilder, ParamStore, Session,
    Transition, TransitionSpec, Upsample,
};
use crate::ops::{channel, Conv2dParams};
use crate::tensor::Tensor;

pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct Encoder {
    /// 7×7 stride-2 convolution, normalization, ReLU.
    pub stem: ConvBnRelu,
    pub blocks: Vec<DenseBlock>,
    pub transitions: Vec<Transition>,
    pub final_norm: BatchNorm2d,
}

#[derive(Clone, Debug)]
pub enum Bridge {
    Aspp(Aspp),
    Identity,
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: Upsample,
    /// Channel count of the concatenated encoder map; 0 on the last stage.
    pub skip_channels: usize,
    pub meca: Option<Meca>,
    pub blocks: [ConvBlock; 2],
}

#[derive(Clone, Debug)]
pub struct CascnModel {
    config: ModelConfig,
    store: ParamStore,
    pub encoder: Encoder,
    pub tail: ConvBlock,
    pub bridge: Bridge,
    pub decoder: Vec<DecoderStage>,
    pub head: Conv2d,
}

/// Intermediate maps of one forward pass.
pub struct Trace<N> {
    /// Encoder taps at strides 2, 4, 8, 16.
    pub skips: Vec<N>,
    /// Decoder maps entering each concatenation: (upsampled, refined skip).
    pub joins: Vec<(N, N)>,
    pub bottom: N,
    pub output: N,
}

impl CascnModel {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let e = &config.encoder;
        let channels = config.encoder_channels();

        let mut enc = pb.sub("encoder");
        let stem = ConvBnRelu::new(&mut enc.sub("stem"), INPUT_CHANNELS, e.stem_channels, 7, Conv2dParams::new(2, 1, 3));
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let mut c = e.stem_channels;
        for (i, &layers) in e.blocks.iter().enumerate() {
            let spec = DenseBlockSpec {
                num_layers: layers,
                growth_rate: e.growth_rate,
                bottleneck_factor: e.bottleneck_factor,
            };
            let block = DenseBlock::new(&mut enc.sub(&format!("block{}", i + 1)), c, spec);
            c = block.out_channels();
            blocks.push(block);
            if i + 1 < e.blocks.len() {
                let t = Transition::new(
                    &mut enc.sub(&format!("trans{}", i + 1)),
                    c,
                    TransitionSpec {
                        compression: e.compression,
                    },
                )?;
                c = t.out_channels;
                transitions.push(t);
            }
        }
        debug_assert_eq!(c, channels.bottom);
        let final_norm = BatchNorm2d::new(&mut enc.sub("norm5"), c);
        drop(enc);

        let tail = ConvBlock::new(&mut pb.sub("tail"), config.conv_mode, c, config.tail_channels, 3);
        let (bridge, mut c) = if config.use_aspp {
            (Bridge::Aspp(Aspp::new(&mut pb.sub("aspp"), config.aspp_spec())?), config.aspp_channels)
        } else {
            (Bridge::Identity, config.tail_channels)
        };

        let mut decoder = Vec::new();
        for (i, &width) in config.decoder_widths.iter().enumerate() {
            let mut sp = pb.sub(&format!("decoder.stage{}", i + 1));
            let up = Upsample::new(&mut sp.sub("up"), c, width);
            let skip_channels = if i < SKIP_COUNT { channels.skips[SKIP_COUNT - 1 - i] } else { 0 };
            let meca = if config.use_meca && skip_channels > 0 {
                Some(Meca::new(&mut sp.sub("meca"), config.meca_spec(skip_channels)?))
            } else {
                None
            };
            let blocks = [
                ConvBlock::new(&mut sp.sub("conv1"), config.conv_mode, width + skip_channels, width, 3),
                ConvBlock::new(&mut sp.sub("conv2"), config.conv_mode, width, width, 3),
            ];
            decoder.push(DecoderStage {
                up,
                skip_channels,
                meca,
                blocks,
            });
            c = width;
        }
        let head = Conv2d::head(&mut pb.sub("head"), c, 1, 1, 0.1);

        Ok(Self {
            config,
            store,
            encoder: Encoder {
                stem,
                blocks,
                transitions,
                final_norm,
            },
            tail,
            bridge,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn forward<G: Graph>(&self, s: &mut Session<'_, G>, x: &Tensor) -> Result<G::Node> {
        self.forward_traced(s, x).map(|t| t.output)
    }

    /// `N×3×H×W` images to `N×1×H×W` probabilities.
    pub fn forward_traced<G: Graph>(&self, s: &mut Session<'_, G>, x: &Tensor) -> Result<Trace<G::Node>> {
        let (_, c, h, w) = x.dims4("cascn")?;
        if c != INPUT_CHANNELS {
            return Err(Error::dim("cascn", "channels", format!("expected {INPUT_CHANNELS}, got {c}")));
        }
        if (h, w) != self.config.input_size {
            let (eh, ew) = self.config.input_size;
            return Err(Error::dim("cascn", "spatial", format!("expected {eh}×{ew}, got {h}×{w}")));
        }
        let (ph, pw) = self.config.padded_size();
        let input = if (ph, pw) == (h, w) {
            s.graph.input(x.clone())
        } else {
            s.graph.input(channel::pad_mirror(x, ph, pw)?)
        };

        let enc = &self.encoder;
        let mut skips = Vec::with_capacity(SKIP_COUNT);
        let mut y = s.scoped("encoder.stem", |s| enc.stem.forward(s, &input))?;
        skips.push(y.clone());
        y = s.graph.max_pool2d(&y, 3, 2, 1)?;
        for (i, block) in enc.blocks.iter().enumerate() {
            y = s.scoped(&format!("encoder.block{}", i + 1), |s| block.forward(s, &y))?;
            if let Some(t) = enc.transitions.get(i) {
                skips.push(y.clone());
                y = s.scoped(&format!("encoder.trans{}", i + 1), |s| t.forward(s, &y))?;
            }
        }
        y = s.scoped("encoder.norm5", |s| {
            let z = enc.final_norm.forward(s, &y)?;
            Ok(s.graph.relu(&z))
        })?;
        let bottom = y.clone();
        y = s.scoped("tail", |s| self.tail.forward(s, &y))?;
        if let Bridge::Aspp(aspp) = &self.bridge {
            y = s.scoped("aspp", |s| aspp.forward(s, &y))?;
        }

        let mut joins = Vec::with_capacity(SKIP_COUNT);
        for (i, stage) in self.decoder.iter().enumerate() {
            y = s.scoped(&format!("decoder.stage{}", i + 1), |s| {
                let up = stage.up.forward(s, &y)?;
                let z = if i < SKIP_COUNT {
                    let skip = &skips[SKIP_COUNT - 1 - i];
                    let refined = match &stage.meca {
                        Some(m) => s.scoped("meca", |s| m.forward(s, skip))?,
                        None => skip.clone(),
                    };
                    let cat = s.graph.concat_channels(&[up.clone(), refined.clone()])?;
                    joins.push((up, refined));
                    cat
                } else {
                    up
                };
                let z = s.scoped("conv1", |s| stage.blocks[0].forward(s, &z))?;
                s.scoped("conv2", |s| stage.blocks[1].forward(s, &z))
            })?;
        }
        let output = s.scoped("head", |s| {
            let logits = self.head.forward(s, &y)?;
            let p = s.graph.sigmoid(&logits);
            if (ph, pw) == (h, w) {
                Ok(p)
            } else {
                s.graph.crop_spatial(&p, h, w)
            }
        })?;
        Ok(Trace {
            skips,
            joins,
            bottom,
            output,
        })
    }

    /// Eval-mode probabilities without recording a graph.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(Eager, &self.store, Mode::Eval);
        let y = self.forward(&mut s, x)?;
        Ok(std::sync::Arc::unwrap_or_clone(y))
    }
}
