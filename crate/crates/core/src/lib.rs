//! Causal sequence model fusing multi-head attention, chunked energy
//! compensation and chunked spectral modulation through sigmoid gates, with
//! synthetic physics data, training, evaluation, ablation and audit tooling.

pub mod datagen;
pub mod energy;
pub mod error;
pub mod gravitator;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod par;
pub mod periodicity;

pub use error::{Error, Result};
