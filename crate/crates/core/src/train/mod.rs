//! Optimizers, the epoch loop, persistence of runs, and evaluation.

pub mod evaluate;
pub mod optim;
pub mod trainer;

pub use evaluate::{evaluate, Predictor};
pub use optim::{adam_update, nesterov_update, OptimizerConfig, OptimizerKind, OptimizerState};
pub use trainer::{epoch_order, make_batch, EpochLog, FitSummary, TrainConfig, TrainState, Trainer};
