//! Layers, parameter storage and forward sessions.

pub mod dense;
pub mod layers;
pub mod params;
pub mod session;

pub use dense::{DenseBlock, DenseBlockSpec, DenseLayer, Transition, TransitionSpec};
pub use layers::{BatchNorm2d, Conv2d, ConvBlock, ConvBnRelu, ConvMode, SeparableBlock, Upsample};
pub use params::{Param, ParamBuilder, ParamId, ParamKind, ParamStore};
pub use session::{apply_running_updates, Mode, RunningUpdate, Session};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{Eager, Graph, Tape};
    use crate::ops::{conv2d_direct, factored_kernel, Conv2dParams};
    use crate::Tensor;

    fn builder_env() -> (ParamStore, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(7))
    }

    const DENSE: DenseBlockSpec = DenseBlockSpec {
        num_layers: 6,
        growth_rate: 32,
        bottleneck_factor: 4,
    };

    #[test]
    fn dense_block_channel_growth() {
        assert_eq!(DENSE.output_channels(64), 256);
        let b = DenseBlockSpec { num_layers: 12, ..DENSE };
        assert_eq!(b.output_channels(128), 512);
        let t = TransitionSpec { compression: 0.5 };
        assert_eq!(t.output_channels(256).unwrap(), 128);
        assert!(TransitionSpec { compression: 0.0 }.output_channels(10).is_err());
    }

    #[test]
    fn dense_block_forward_shape() {
        let (mut store, mut rng) = builder_env();
        let spec = DenseBlockSpec {
            num_layers: 3,
            growth_rate: 4,
            bottleneck_factor: 2,
        };
        let block = DenseBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), 5, spec);
        let trans = Transition::new(
            &mut ParamBuilder::new(&mut store, &mut rng).sub("t"),
            block.out_channels(),
            TransitionSpec { compression: 0.5 },
        )
        .unwrap();
        let mut s = Session::new(Eager, &store, Mode::Eval);
        let x = s.graph.input(Tensor::ones([2, 5, 8, 8]));
        let y = block.forward(&mut s, &x).unwrap();
        assert_eq!(y.shape(), &[2, 17, 8, 8]);
        // the block input is passed through unchanged as the leading channels
        assert!(y.data()[..5 * 64].iter().all(|&v| v == 1.0));
        let z = trans.forward(&mut s, &y).unwrap();
        assert_eq!(z.shape(), &[2, 8, 4, 4]);
    }

    #[test]
    fn separable_parameter_count() {
        let (mut store, mut rng) = builder_env();
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        SeparableBlock::new(&mut pb.sub("sep"), 32, 256, 3);
        let sep = store.num_trainable();
        let (mut store2, mut rng2) = builder_env();
        let mut pb = ParamBuilder::new(&mut store2, &mut rng2);
        ConvBnRelu::new(&mut pb.sub("std"), 32, 256, 3, Conv2dParams::same(3, 1));
        let std = store2.num_trainable();
        // both carry the same 2·M affine parameters
        assert_eq!(sep - 512, 32 * 9 + 32 * 256);
        assert_eq!(std - 512, 73728);
    }

    #[test]
    fn separable_matches_factored_standard_conv() {
        let (mut store, mut rng) = builder_env();
        let block = SeparableBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), 3, 4, 3);
        let x = Tensor::uniform([1, 3, 6, 5], -1.0, 1.0, &mut rng);
        let mut g = Eager;
        let xn = g.input(x.clone());
        let dw = g.parameter(store.get(block.depthwise).clone());
        let pw = g.parameter(store.get(block.pointwise).clone());
        let y = g.depthwise_conv2d(&xn, &dw, block.params).unwrap();
        let y = g.pointwise_conv(&y, &pw, None).unwrap();
        let k = factored_kernel(store.get(block.depthwise), store.get(block.pointwise)).unwrap();
        let want = conv2d_direct(&x, &k, None, block.params).unwrap();
        assert!(y.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn train_mode_collects_running_updates() {
        let (mut store, mut rng) = builder_env();
        let bn = BatchNorm2d::new(&mut ParamBuilder::new(&mut store, &mut rng), 2);
        let x = Tensor::new([2, 2, 1, 1], vec![1.0, 10.0, 3.0, 20.0]).unwrap();
        let updates = {
            let mut s = Session::new(Tape::new(), &store, Mode::Train);
            let xn = s.graph.input(x);
            bn.forward(&mut s, &xn).unwrap();
            s.into_parts().1
        };
        assert_eq!(updates.len(), 1);
        apply_running_updates(&mut store, &updates);
        let rm = store.get(bn.running_mean);
        assert!((rm.data()[0] - 0.2).abs() < 1e-12);
        assert!((rm.data()[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn param_grads_cover_bound_parameters() {
        let (mut store, mut rng) = builder_env();
        let block = ConvBnRelu::new(&mut ParamBuilder::new(&mut store, &mut rng), 2, 3, 3, Conv2dParams::same(3, 1));
        let x = Tensor::uniform([2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let mut s = Session::new(Tape::new(), &store, Mode::Train);
        let xn = s.graph.input(x);
        let y = block.forward(&mut s, &xn).unwrap();
        let l = s.graph.sum(&y);
        let mut grads = s.graph.backward(l).unwrap();
        let pg = s.param_grads(&mut grads);
        // weight, gamma, beta
        assert_eq!(pg.len(), 3);
        assert_eq!(pg[0].1.shape(), &[3, 2, 3, 3]);
    }

    #[test]
    fn builder_names_are_nested() {
        let (mut store, mut rng) = builder_env();
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        Conv2d::new(&mut pb.sub("enc").sub("stem"), 3, 4, 7, Conv2dParams::new(2, 1, 3), false);
        assert!(store.find("enc.stem.weight").is_some());
    }
}
