//! Synthetic physics corpora: simulation, quantization and dataset files.

pub mod dataset;
pub mod systems;
pub mod tokenizer;

pub use dataset::{generate_dataset, manifest_path, DatagenConfig, Dataset, SequenceMeta};
pub use systems::{energy_conservation_error, simulate, System, SystemKind, SystemSpec, Trajectory};
pub use tokenizer::{detokenize_values, group_states, tokenize, tokenize_scaled, TokenizerSpec};
