//! The full network, its ablation variants, cost accounting and persistence.

pub mod network;
pub mod checkpoint;
pub mod config;
pub mod flops;

pub use network::{Bridge, CascnModel, DecoderStage, Encoder, Trace};
pub use checkpoint::{Container, FORMAT_VERSION, MAGIC};
pub use config::{variant, EncoderConfig, MecaKernel, ModelConfig, Scale, Variant};
pub use flops::{cost_ratio, flop_count, separable_cost, standard_cost, FlopReport, LayerCost, LayerKind, Ratio};
