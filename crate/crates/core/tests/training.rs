use cascn::autodiff::{Graph, Tape};
use cascn::data::{images_tensor, masks_tensor, synth_dataset, AugmentationPolicy};
use cascn::metrics::{ConfusionCounts, Metrics};
use cascn::model::{CascnModel, ModelConfig};
use cascn::nn::{Mode, Session};
use cascn::train::{adam_update, evaluate, nesterov_update, OptimizerConfig, TrainConfig, Trainer};
use cascn::{Error, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trainer(lr: f64) -> Trainer {
    let model = CascnModel::build(ModelConfig::desk()).unwrap();
    Trainer::new(model, OptimizerConfig { lr, ..OptimizerConfig::default() }).unwrap()
}

#[test]
fn zero_epochs_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_dataset(4, (48, 64), 0).unwrap();
    let mut t = trainer(0.003);
    let before = (t.model.store().clone(), t.state.clone());
    let cfg = TrainConfig { epochs: 0, batch_size: 2, max_steps: 0 };
    let summary = t.fit(&samples, &[], &cfg, &AugmentationPolicy::full(), Some(dir.path())).unwrap();
    assert!(summary.epochs.is_empty() && summary.step_losses.is_empty());
    assert!(t.model.store().bitwise_eq(&before.0));
    assert_eq!(t.state, before.1);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn divergence_names_a_layer() {
    let samples = synth_dataset(2, (48, 64), 0).unwrap();
    let (x, y) = (images_tensor(&samples).unwrap(), masks_tensor(&samples).unwrap());
    let mut t = trainer(1e300);
    let err = (0..3).find_map(|_| t.train_step(&x, &y).err()).expect("run diverges");
    match err {
        Error::NonFinite { layer } => assert!(layer.contains('.'), "{layer}"),
        other => panic!("{other}"),
    }
}

#[test]
fn zero_learning_rate_step_changes_nothing() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let w0: Vec<f64> = (0..32).map(|_| r.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..32).map(|_| r.gen_range(-1.0..1.0)).collect();
    let cfg = OptimizerConfig { lr: 0.0, ..OptimizerConfig::default() };
    let (mut w, mut m, mut v) = (w0.clone(), vec![0.0; 32], vec![0.0; 32]);
    adam_update(&mut w, &g, &mut m, &mut v, 1, &cfg);
    assert_eq!(w, w0);
    let mut vel = vec![0.0; 32];
    nesterov_update(&mut w, &g, &mut vel, &cfg);
    assert_eq!(w, w0);
}

#[test]
fn first_adam_step_is_bounded_by_the_learning_rate() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let cfg = OptimizerConfig::default();
    let w0: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..64).map(|_| r.gen_range(-100.0..100.0)).collect();
    let (mut w, mut m, mut v) = (w0.clone(), vec![0.0; 64], vec![0.0; 64]);
    adam_update(&mut w, &g, &mut m, &mut v, 1, &cfg);
    for (a, b) in w.iter().zip(&w0) {
        assert!((a - b).abs() <= cfg.lr * (1.0 + 1e-12));
    }
}

#[test]
fn loss_descends_on_a_fixed_batch() {
    let samples = synth_dataset(2, (48, 64), 3).unwrap();
    let (x, y) = (images_tensor(&samples).unwrap(), masks_tensor(&samples).unwrap());
    let model = CascnModel::build(ModelConfig::desk()).unwrap();
    let loss_of = |m: &CascnModel| {
        let mut s = Session::new(Tape::new(), m.store(), Mode::Train);
        let p = m.forward(&mut s, &x).unwrap();
        let l = s.graph.seg_loss(&p, &y).unwrap();
        let v = s.value(&l).item().unwrap();
        let mut g = s.graph.backward(l).unwrap();
        (v, s.param_grads(&mut g))
    };
    let (before, grads) = loss_of(&model);
    let mut stepped = model.clone();
    for (id, g) in &grads {
        let w = stepped.store_mut().get_mut(*id);
        *w = w.zip_map(g, |a, b| a - 1e-4 * b).unwrap();
    }
    let (after, _) = loss_of(&stepped);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn evaluation_harness() {
    let samples = synth_dataset(6, (16, 24), 2).unwrap();
    let oracle = |img: &Tensor| -> cascn::Result<Tensor> {
        let s = samples.iter().find(|s| s.image_tensor() == *img).expect("known image");
        Ok(s.mask_tensor())
    };
    let report = evaluate(&oracle, &samples).unwrap();
    assert_eq!(report.mean().unwrap().values(), [1.0; 5]);
    assert_eq!(report.to_csv().lines().count(), samples.len() + 2);

    let undecided = |img: &Tensor| -> cascn::Result<Tensor> {
        Ok(Tensor::full([1, 1, img.shape()[2], img.shape()[3]], 0.5))
    };
    let m = evaluate(&undecided, &samples).unwrap().mean().unwrap();
    assert_eq!((m.se, m.sp), (1.0, 0.0));
}

#[test]
fn aggregation_ignores_order() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut items: Vec<Metrics> = (0..40)
        .map(|_| {
            Metrics::from_counts(&ConfusionCounts {
                tp: r.gen_range(0..50),
                fp: r.gen_range(0..50),
                tn: r.gen_range(0..50),
                fn_: r.gen_range(0..50),
            })
        })
        .collect();
    let reference = Metrics::mean(&items).unwrap();
    for _ in 0..10 {
        items.shuffle(&mut r);
        assert_eq!(Metrics::mean(&items).unwrap(), reference);
    }
}
