//! Central-difference checks of every differentiable operation and of the
//! loss of a whole desk-scale network.

use cascn::model::ModelConfig;
use cascn::verify::{model_gradient_check, op_gradient_checks, MODEL_TOLERANCE, OP_TOLERANCE, SEEDS};

#[test]
fn every_op_on_five_seeds() {
    for seed in 0..SEEDS {
        let checks = op_gradient_checks(seed).unwrap();
        assert!(checks.len() > 40);
        for c in checks {
            assert!(c.report.max_rel_err < OP_TOLERANCE, "{} seed {seed}: {:?}", c.name, c.report);
        }
    }
}

#[test]
fn network_loss_on_five_seeds() {
    for seed in 0..SEEDS {
        let c = model_gradient_check(&ModelConfig::desk(), seed).unwrap();
        assert!(c.rel_err < MODEL_TOLERANCE, "seed {seed}: {c:?}");

    }
}
