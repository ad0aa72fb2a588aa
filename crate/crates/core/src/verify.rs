//! Self-verification suite.
//!
//! Numerical gradients for every differentiable operation and for the whole
//! network, adjoint identities of the linear kernels, and closed-form oracles
//! for the losses, metrics, cost formulas and the separable factorization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, relative_error, Eager, GradCheckReport, Graph, Tape, Var};
use crate::data::synth_dataset;
use crate::error::Result;
use crate::loss::{bce_loss, jaccard_loss, seg_loss, PixelBatch};
use crate::metrics::{confusion, Metrics, THRESHOLD};
use crate::model::{cost_ratio, flop_count, CascnModel, ModelConfig, Ratio};
use crate::nn::{Mode, ParamStore, Session};
use crate::ops::conv::{conv2d, conv2d_backward, conv2d_direct, Conv2dParams};
use crate::ops::depthwise::{depthwise_conv2d, depthwise_conv2d_backward, factored_kernel, pointwise_conv};
use crate::ops::transpose::{conv_transpose2x2, conv_transpose2x2_backward};
use crate::tensor::Tensor;

/// Acceptance bound for single operations.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Acceptance bound for the loss of the whole network.
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Seeds per gradient check.
pub const SEEDS: u64 = 5;

// Central differences are exact up to rounding for functions at most
// quadratic in the probed input, so linear kernels take a large step.
const LINEAR_EPS: f64 = 1e-3;
const SMOOTH_EPS: f64 = 1e-5;
// Small enough that a probe almost never crosses a ReLU or max-pool switch.
const KINK_EPS: f64 = 1e-6;
/// Step along the joint parameter direction of the network check. The loss
/// is piecewise smooth with switch points dense enough that steps of 1e-5
/// routinely straddle one.
pub const MODEL_EPS: f64 = 1e-7;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Cotangent weights with magnitude in [0.5, 1.5], so no output coordinate is
/// nearly ignored.
fn cotangent(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Grad-checks `⟨f(inputs), r⟩` with respect to `inputs[which]`.
fn probe<F>(seed: u64, inputs: &[Tensor], which: usize, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check(
        |t, v| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, x)| if i == which { v } else { t.input(x.clone()) })
                .collect();
            let y = f(t, &vars)?;
            let r = t.input(cotangent(t.value(&y).shape(), seed));
            let p = t.mul(&y, &r)?;
            Ok(t.sum(&p))
        },
        &inputs[which],
        eps,
    )
}

/// One named gradient check.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub report: GradCheckReport,
}

/// Runs the gradient check of every differentiable operation, and of each of
/// its differentiable inputs, on inputs drawn from `seed`.
pub fn op_gradient_checks(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report: Result<GradCheckReport>| -> Result<()> {
        out.push(OpCheck {
            name: name.to_string(),
            report: report?,
        });
        Ok(())
    };

    for (label, k, p) in [
        ("conv2d", 3, Conv2dParams::new(1, 1, 1)),
        ("conv2d stride 2", 7, Conv2dParams::new(2, 1, 3)),
        ("conv2d dilation 2", 3, Conv2dParams::new(1, 2, 2)),
    ] {
        let inputs = [uniform(&mut rng, &[2, 3, 9, 10]), uniform(&mut rng, &[4, 3, k, k]), uniform(&mut rng, &[4])];
        for (which, arg) in ["x", "w", "b"].iter().enumerate() {
            push(
                &format!("{label} d{arg}"),
                probe(seed, &inputs, which, LINEAR_EPS, |t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), p)),
            )?;
        }
    }

    for (label, p) in [("depthwise", Conv2dParams::same(3, 1)), ("depthwise dilation 2", Conv2dParams::same(3, 2))] {
        let inputs = [uniform(&mut rng, &[2, 3, 6, 7]), uniform(&mut rng, &[3, 1, 3, 3])];
        for (which, arg) in ["x", "w"].iter().enumerate() {
            push(
                &format!("{label} d{arg}"),
                probe(seed, &inputs, which, LINEAR_EPS, |t, v| t.depthwise_conv2d(&v[0], &v[1], p)),
            )?;
        }
    }

    let inputs = [uniform(&mut rng, &[2, 3, 4, 5]), uniform(&mut rng, &[5, 3, 1, 1]), uniform(&mut rng, &[5])];
    for (which, arg) in ["x", "w", "b"].iter().enumerate() {
        push(
            &format!("pointwise d{arg}"),
            probe(seed, &inputs, which, LINEAR_EPS, |t, v| t.pointwise_conv(&v[0], &v[1], Some(&v[2]))),
        )?;
    }

    let inputs = [uniform(&mut rng, &[2, 3, 3, 4]), uniform(&mut rng, &[3, 2, 2, 2]), uniform(&mut rng, &[2])];
    for (which, arg) in ["x", "w", "b"].iter().enumerate() {
        push(
            &format!("transposed conv d{arg}"),
            probe(seed, &inputs, which, LINEAR_EPS, |t, v| t.conv_transpose2x2(&v[0], &v[1], Some(&v[2]))),
        )?;
    }

    let x = [uniform(&mut rng, &[2, 3, 6, 8])];
    push("max pool 2/2", probe(seed, &x, 0, KINK_EPS, |t, v| t.max_pool2d(&v[0], 2, 2, 0)))?;
    push("max pool 3/2/1", probe(seed, &x, 0, KINK_EPS, |t, v| t.max_pool2d(&v[0], 3, 2, 1)))?;
    push("avg pool", probe(seed, &x, 0, LINEAR_EPS, |t, v| t.avg_pool2d(&v[0], 2, 2)))?;
    push("global avg pool", probe(seed, &x, 0, LINEAR_EPS, |t, v| t.global_avg_pool(&v[0])))?;
    push("global max pool", probe(seed, &x, 0, KINK_EPS, |t, v| t.global_max_pool(&v[0])))?;

    let inputs = [uniform(&mut rng, &[2, 7]), uniform(&mut rng, &[3])];
    for (which, arg) in ["v", "w"].iter().enumerate() {
        push(
            &format!("channel conv1d d{arg}"),
            probe(seed, &inputs, which, LINEAR_EPS, |t, v| t.conv1d_channels(&v[0], &v[1])),
        )?;
    }

    let inputs = [uniform(&mut rng, &[3, 4, 3, 5]), uniform(&mut rng, &[4]), uniform(&mut rng, &[4])];
    let running_mean = uniform(&mut rng, &[4]);
    let running_var = uniform(&mut rng, &[4]).map(|v| v.abs() + 0.5);
    for (which, arg) in ["x", "gamma", "beta"].iter().enumerate() {
        push(
            &format!("batch norm train d{arg}"),
            probe(seed, &inputs, which, SMOOTH_EPS, |t, v| {
                Ok(t.batch_norm_train(&v[0], &v[1], &v[2], 1e-5)?.0)
            }),
        )?;
        push(
            &format!("batch norm eval d{arg}"),
            probe(seed, &inputs, which, LINEAR_EPS, |t, v| {
                t.batch_norm_eval(&v[0], &v[1], &v[2], &running_mean, &running_var, 1e-5)
            }),
        )?;
    }

    let pair = [uniform(&mut rng, &[2, 3, 4, 5]), uniform(&mut rng, &[2, 3, 4, 5])];
    push("relu", probe(seed, &pair, 0, KINK_EPS, |t, v| Ok(t.relu(&v[0]))))?;
    push("sigmoid", probe(seed, &pair, 0, SMOOTH_EPS, |t, v| Ok(t.sigmoid(&v[0]))))?;
    push("scale", probe(seed, &pair, 0, LINEAR_EPS, |t, v| Ok(t.scale(&v[0], -2.5))))?;
    push("add", probe(seed, &pair, 0, LINEAR_EPS, |t, v| t.add(&v[0], &v[1])))?;
    push("mul", probe(seed, &pair, 0, LINEAR_EPS, |t, v| t.mul(&v[0], &v[1])))?;
    push("mul fan-out", probe(seed, &pair, 0, LINEAR_EPS, |t, v| t.mul(&v[0], &v[0])))?;
    push("sum", probe(seed, &pair, 0, LINEAR_EPS, |t, v| Ok(t.sum(&v[0]))))?;
    push("reshape", probe(seed, &pair, 0, LINEAR_EPS, |t, v| t.reshape(&v[0], &[6, 20])))?;
    push("crop", probe(seed, &pair, 0, LINEAR_EPS, |t, v| t.crop_spatial(&v[0], 3, 2)))?;
    push(
        "concat",
        probe(seed, &pair, 0, LINEAR_EPS, |t, v| t.concat_channels(&[v[1], v[0], v[0]])),
    )?;

    let inputs = [uniform(&mut rng, &[2, 7, 3, 3]), uniform(&mut rng, &[2, 7])];
    for (which, arg) in ["x", "s"].iter().enumerate() {
        push(
            &format!("channel scale d{arg}"),
            probe(seed, &inputs, which, LINEAR_EPS, |t, v| t.scale_channels(&v[0], &v[1])),
        )?;
    }
    let p = [uniform(&mut rng, &[2, 7, 1, 1])];
    push("broadcast", probe(seed, &p, 0, LINEAR_EPS, |t, v| t.broadcast_spatial(&v[0], 3, 4)))?;

    // Probabilities well inside the cross-entropy clamp.
    let p = [uniform(&mut rng, &[2, 1, 4, 5]).map(|v| 0.5 + 0.4 * v)];
    let target = Tensor::new(
        [2, 1, 4, 5],
        (0..40).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect(),
    )?;
    push("cross-entropy", probe(seed, &p, 0, SMOOTH_EPS, |t, v| t.bce_loss(&v[0], &target)))?;
    push("jaccard distance", probe(seed, &p, 0, SMOOTH_EPS, |t, v| t.jaccard_loss(&v[0], &target)))?;
    push("segmentation loss", probe(seed, &p, 0, SMOOTH_EPS, |t, v| t.seg_loss(&v[0], &target)))?;
    Ok(out)
}

/// Directional derivative of the training loss along one random unit
/// direction in the joint space of all trainable parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

fn train_loss(model: &CascnModel, store: &ParamStore, x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut s = Session::new(Eager, store, Mode::Train);
    let p = model.forward(&mut s, x)?;
    s.graph.seg_loss(&p, y)?.item()
}

/// Compares the tape gradient of the training loss of a freshly initialized
/// `config` network, on one synthetic image, with a central difference.
/// `seed` drives the weights, the image and the direction.
pub fn model_gradient_check(config: &ModelConfig, seed: u64) -> Result<ModelCheck> {
    let mut config = config.clone();
    config.seed = seed;
    let model = CascnModel::build(config)?;
    let sample = synth_dataset(1, model.config().input_size, seed)?.remove(0);
    let (x, y) = (sample.image_tensor(), sample.mask_tensor());

    let mut s = Session::new(Tape::new(), model.store(), Mode::Train);
    let p = model.forward(&mut s, &x)?;
    let loss = s.graph.seg_loss(&p, &y)?;
    let mut grads = s.graph.backward(loss)?;
    let grads = s.param_grads(&mut grads);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ec);
    let dirs: Vec<Tensor> = grads.iter().map(|(_, g)| uniform(&mut rng, g.shape())).collect();
    let norm = dirs.iter().map(|d| d.dot(d)).sum::<Result<f64>>()?.sqrt();
    let dirs: Vec<Tensor> = dirs.into_iter().map(|d| d.map(|v| v / norm)).collect();
    let analytic = grads
        .iter()
        .zip(&dirs)
        .map(|((_, g), d)| g.dot(d))
        .sum::<Result<f64>>()?;

    let at = |step: f64| -> Result<f64> {
        let mut store = model.store().clone();
        for ((id, _), d) in grads.iter().zip(&dirs) {
            let moved = store.get(*id).zip_map(d, |w, d| w + step * d)?;
            *store.get_mut(*id) = moved;
        }
        train_loss(&model, &store, &x, &y)
    };
    let numeric = (at(MODEL_EPS)? - at(-MODEL_EPS)?) / (2.0 * MODEL_EPS);
    Ok(ModelCheck {
        analytic,
        numeric,
        rel_err: relative_error(analytic, numeric),
    })
}

/// Outcome of one suite entry.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn conv_gemm_vs_direct() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let p = Conv2dParams::new(rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(0..3));
        let shape = [2, rng.gen_range(1..4), rng.gen_range(7..12), rng.gen_range(7..12)];
        let x = uniform(&mut rng, &shape);
        let cout = rng.gen_range(1..5);
        let w = uniform(&mut rng, &[cout, shape[1], k, k]);
        let b = uniform(&mut rng, &[w.shape()[0]]);
        worst = worst.max(conv2d(&x, &w, Some(&b), p)?.max_abs_diff(&conv2d_direct(&x, &w, Some(&b), p)?)?);
    }
    Ok(CheckResult::new(
        "conv2d gemm matches direct loops",
        worst < 1e-12,
        format!("max abs diff {worst:.2e} over 20 shapes"),
    ))
}

/// `⟨A x, y⟩ = ⟨x, Aᵀ y⟩` where `Aᵀ` is the input gradient of a linear kernel.
fn adjoint(name: &str, x: &Tensor, ax: &Tensor, back: impl Fn(&Tensor) -> Result<Tensor>) -> Result<CheckResult> {
    let y = cotangent(ax.shape(), 17);
    let lhs = ax.dot(&y)?;
    let rhs = x.dot(&back(&y)?)?;
    let err = relative_error(lhs, rhs);
    Ok(CheckResult::new(
        format!("adjoint {name}"),
        err < 1e-12,
        format!("<Ax,y> {lhs:.10e} <x,A'y> {rhs:.10e}"),
    ))
}

fn adjoints() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut out = Vec::new();

    let x = uniform(&mut rng, &[2, 3, 9, 8]);
    let w = uniform(&mut rng, &[4, 3, 3, 3]);
    let p = Conv2dParams::new(2, 1, 1);
    let ax = conv2d(&x, &w, None, p)?;
    out.push(adjoint("conv2d input", &x, &ax, |y| Ok(conv2d_backward(&x, &w, false, p, y)?.dx))?);
    out.push(adjoint("conv2d weight", &w, &ax, |y| Ok(conv2d_backward(&x, &w, false, p, y)?.dw))?);

    let dw = uniform(&mut rng, &[3, 1, 3, 3]);
    let p = Conv2dParams::same(3, 2);
    let ax = depthwise_conv2d(&x, &dw, p)?;
    out.push(adjoint("depthwise input", &x, &ax, |y| Ok(depthwise_conv2d_backward(&x, &dw, p, y)?.0))?);

    let tw = uniform(&mut rng, &[3, 2, 2, 2]);
    let ax = conv_transpose2x2(&x, &tw, None)?;
    out.push(adjoint("transposed conv input", &x, &ax, |y| {
        Ok(conv_transpose2x2_backward(&x, &tw, false, y)?.dx)
    })?);
    Ok(out)
}

fn op_gradients() -> Result<Vec<CheckResult>> {
    let mut worst: Vec<OpCheck> = op_gradient_checks(0)?;
    for seed in 1..SEEDS {
        for (slot, c) in worst.iter_mut().zip(op_gradient_checks(seed)?) {
            if c.report.max_rel_err > slot.report.max_rel_err {
                *slot = c;
            }
        }
    }
    Ok(worst
        .into_iter()
        .map(|c| {
            CheckResult::new(
                format!("gradient {}", c.name),
                c.report.max_rel_err < OP_TOLERANCE,
                format!("max rel err {:.2e} over {SEEDS} seeds", c.report.max_rel_err),
            )
        })
        .collect())
}

fn model_gradient() -> Result<CheckResult> {
    let config = ModelConfig::desk();
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        worst = worst.max(model_gradient_check(&config, seed)?.rel_err);
    }
    Ok(CheckResult::new(
        "gradient full network loss",
        worst < MODEL_TOLERANCE,
        format!("max rel err {worst:.2e} over {SEEDS} seeds"),
    ))
}

fn loss_oracles() -> Result<CheckResult> {
    let ones = vec![1.0; 64];
    let half = vec![0.5; 64];
    let mask: Vec<f64> = (0..64).map(|i| f64::from(i % 3 == 0)).collect();
    let perfect = jaccard_loss(PixelBatch::new(&mask, &mask)?);
    let plug_in = jaccard_loss(PixelBatch::new(&half, &ones)?);
    let ce = bce_loss(PixelBatch::new(&half, &mask)?);
    let b = PixelBatch::new(&half, &mask)?;
    let additive = seg_loss(b) == bce_loss(b) + jaccard_loss(b);
    let ok = perfect == 0.0 && plug_in == 0.5 && (ce - std::f64::consts::LN_2).abs() < 1e-9 && additive;
    Ok(CheckResult::new(
        "loss closed forms",
        ok,
        format!("J(perfect) {perfect} J(x=1,p=0.5) {plug_in} BCE(0.5) {ce:.12}"),
    ))
}

fn metric_oracles() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut ok = true;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..1000 {
        let density = rng.gen_range(0.0..1.0);
        let pred: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gt: Vec<f64> = (0..256).map(|_| f64::from(u8::from(rng.gen_bool(density)))).collect();
        let m = Metrics::from_counts(&confusion(&pred, &gt, THRESHOLD)?);
        let (mut tp, mut fp, mut tn, mut fn_) = (0u32, 0u32, 0u32, 0u32);
        for (p, g) in pred.iter().zip(&gt) {
            match (*p >= 0.5, *g == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let frac = |a: u32, b: u32, empty: f64| if b == 0 { empty } else { f64::from(a) / f64::from(b) };
        let expected = [
            frac(tp, tp + fn_, if fp == 0 { 1.0 } else { 0.0 }),
            frac(tn, tn + fp, if fn_ == 0 { 1.0 } else { 0.0 }),
            frac(tp + tn, 256, 1.0),
            frac(2 * tp, 2 * tp + fp + fn_, 1.0),
            frac(tp, tp + fp + fn_, 1.0),
        ];
        ok &= m.values() == expected;
        worst_identity = worst_identity.max((m.di - 2.0 * m.ja / (1.0 + m.ja)).abs());
    }
    ok &= worst_identity <= 1e-12;
    Ok(CheckResult::new(
        "metrics match pixel enumeration",
        ok,
        format!("1000 random 16x16 pairs, max |DI - 2JA/(1+JA)| {worst_identity:.1e}"),
    ))
}

fn cost_oracles() -> Result<CheckResult> {
    let mut ok = cost_ratio(3, 128) == Ratio::new(1152, 137);
    let mut layers = 0;
    for config in [ModelConfig::desk(), ModelConfig::paper()] {
        let report = flop_count(&CascnModel::build(config)?);
        for l in &report.layers {
            let k2 = (l.kernel * l.kernel) as u64;
            let (hw, n, m) = ((l.h * l.w) as u64, l.n as u64, l.m as u64);
            ok &= l.standard == hw * k2 * n * m && l.separable == hw * n * (k2 + m);
            ok &= l.ratio() == Ratio::new(k2 * m, k2 + m);
            layers += 1;
        }
    }
    Ok(CheckResult::new(
        "cost formulas",
        ok,
        format!("ratio(3,128) {} and {layers} layers", cost_ratio(3, 128)),
    ))
}

fn factorization_oracle() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = rng.gen_range(1..5);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let d = rng.gen_range(1..3);
        let p = Conv2dParams::same(k, d);
        let shape = [1, c, rng.gen_range(4..9), rng.gen_range(4..9)];
        let x = uniform(&mut rng, &shape);
        let wd = uniform(&mut rng, &[c, 1, k, k]);
        let m = rng.gen_range(1..5);
        let wp = uniform(&mut rng, &[m, c, 1, 1]);
        let sep = pointwise_conv(&depthwise_conv2d(&x, &wd, p)?, &wp, None)?;
        let std = conv2d_direct(&x, &factored_kernel(&wd, &wp)?, None, p)?;
        worst = worst.max(sep.max_abs_diff(&std)?);
    }
    Ok(CheckResult::new(
        "separable equals factored standard conv",
        worst < 1e-10,
        format!("max abs diff {worst:.2e} over 100 configurations"),
    ))
}

/// Runs every check in order, handing each result to `report` as soon as it
/// is known.
pub fn run_suite(mut report: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
    let mut all = Vec::new();
    let mut emit = |r: CheckResult| {
        report(&r);
        all.push(r);
    };
    let groups: [(&str, fn() -> Result<Vec<CheckResult>>); 8] = [
        ("conv2d gemm matches direct loops", || Ok(vec![conv_gemm_vs_direct()?])),
        ("adjoint", adjoints),
        ("gradient", op_gradients),
        ("gradient full network loss", || Ok(vec![model_gradient()?])),
        ("loss closed forms", || Ok(vec![loss_oracles()?])),
        ("metrics match pixel enumeration", || Ok(vec![metric_oracles()?])),
        ("cost formulas", || Ok(vec![cost_oracles()?])),
        ("separable equals factored standard conv", || Ok(vec![factorization_oracle()?])),
    ];
    for (name, run) in groups {
        match run() {
            Ok(results) => results.into_iter().for_each(&mut emit),
            Err(e) => emit(CheckResult::new(name, false, format!("error: {e}"))),
        }
    }
    all
}
