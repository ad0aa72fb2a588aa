//! Sequential vs rayon-parallel timing for the hot kernels and a full
//! training step. Without the `parallel` feature both rows run sequentially.

use std::hint::black_box;

use cascn::data::{images_tensor, masks_tensor, synth_dataset};
use cascn::model::{CascnModel, ModelConfig};
use cascn::ops::{conv2d, depthwise_conv2d, Conv2dParams};
use cascn::par;
use cascn::train::{OptimizerConfig, Trainer};
use cascn::Tensor;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("sequential", true), ("parallel", false)];

fn convolutions(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::uniform([4, 32, 48, 64], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform([32, 32, 3, 3], -0.1, 0.1, &mut rng);
    let dw = Tensor::uniform([32, 1, 3, 3], -0.3, 0.3, &mut rng);
    let p = Conv2dParams::same(3, 1);

    let mut g = c.benchmark_group("conv2d_4x32x48x64_k3");
    for (mode, seq) in MODES {
        par::force_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| conv2d(black_box(&x), &w, None, p).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("depthwise_4x32x48x64_k3");
    for (mode, seq) in MODES {
        par::force_sequential(seq);
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| depthwise_conv2d(black_box(&x), &dw, p).unwrap())
        });
    }
    g.finish();
    par::force_sequential(false);
}

fn train_step(c: &mut Criterion) {
    let samples = synth_dataset(2, (48, 64), 0).unwrap();
    let x = images_tensor(&samples).unwrap();
    let y = masks_tensor(&samples).unwrap();

    let mut g = c.benchmark_group("train_step_desk_2x48x64");
    g.sample_size(10);
    for (mode, seq) in MODES {
        par::force_sequential(seq);
        let model = CascnModel::build(ModelConfig::desk()).unwrap();
        let mut trainer = Trainer::new(model, OptimizerConfig::default()).unwrap();
        g.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| trainer.train_step(black_box(&x), &y).unwrap())
        });
    }
    g.finish();
    par::force_sequential(false);
}

criterion_group!(benches, convolutions, train_step);
criterion_main!(benches);
