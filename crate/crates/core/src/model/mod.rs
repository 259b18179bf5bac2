//! Gated fusion of attention, energy and periodicity components, stacked
//! into a decoder with a tied output head.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;

pub use config::{Component, Gating, ModelConfig, Variant};
pub use forward::{block_forward, block_forward_ablated, cross_entropy_loss, gate_values, perplexity, Ablation, Model};
pub use params::{BlockParams, FeedForwardParams, GateParams, LayerNormParams, ModelParams};
