use cascn::config::RunConfig;
use cascn::model::{MecaKernel, Scale};
use cascn::nn::ConvMode;
use cascn::train::OptimizerKind;
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        (any::<bool>(), 1usize..8, 1usize..8, any::<bool>(), any::<bool>(), any::<bool>()),
        (1e-6f64..1.0, 0.0f64..0.999, 0.0f64..0.999, any::<bool>(), 0.05f64..0.9, 0.0f64..0.3),
        (any::<[bool; 4]>(), 0.0f64..180.0, 0.0f64..1.0),
        (0usize..50, 1usize..9, 0u64..1000, any::<u64>(), prop::collection::vec(1usize..5, 4)),
        prop_oneof![Just(MecaKernel::Adaptive), (0usize..4).prop_map(|k| MecaKernel::Fixed(2 * k + 1))],
    )
        .prop_map(|(m, o, a, t, meca)| {
            let mut c = RunConfig::for_scale(if m.0 { Scale::Desk } else { Scale::Paper });
            c.model.input_size = (16 * m.1, 16 * m.2);
            c.model.conv_mode = if m.3 { ConvMode::Separable } else { ConvMode::Standard };
            c.model.use_aspp = m.4;
            c.model.use_meca = m.5;
            c.model.encoder.blocks = t.4;
            c.model.meca_kernel = meca;
            c.optimizer.kind = if o.3 { OptimizerKind::Adam } else { OptimizerKind::SgdNesterov };
            c.optimizer.lr = o.0;
            c.optimizer.beta1 = o.1;
            c.optimizer.momentum = o.2;
            c.split.train = o.4;
            c.split.val = o.5.min(1.0 - o.4);
            c.split.test = 1.0 - c.split.train - c.split.val;
            [c.augmentation.rotate, c.augmentation.hflip, c.augmentation.vflip, c.augmentation.dflip] = a.0;
            c.augmentation.max_degrees = a.1;
            c.augmentation.probability = a.2;
            c.train.epochs = t.0;
            c.train.batch_size = t.1;
            c.train.max_steps = t.2;
            c.set_seed(t.3);
            c
        })
}

proptest! {
    #[test]
    fn parse_render_parse_is_a_fixed_point(c in arb_config()) {
        let text = c.to_text();
        let parsed = RunConfig::parse(&text, Scale::Paper).unwrap();
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn any_unknown_key_is_rejected(key in "[a-z_]{3,12}") {
        let c = RunConfig::for_scale(Scale::Desk);
        prop_assume!(!c.entries().iter().any(|(k, _)| *k == key));
        prop_assume!(!["variant", "augmentation"].contains(&key.as_str()));
        let err = RunConfig::parse(&format!("{key}=1\n"), Scale::Desk).unwrap_err();
        prop_assert!(err.to_string().contains(&key));
    }
}
