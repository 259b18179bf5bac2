//! Training, evaluation, ablation, audits and gradient checks.

pub mod audit;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod train;

pub use audit::{audit, audit_causality, AuditKind, AuditReport, TrialResult, AUDIT_TOLERANCE};
pub use config::{AuditConfig, DataConfig, EvalConfig, OptimizerConfig, OutputConfig, RunConfig};
pub use eval::{ablate, ablation_table, evaluate, load_checked, AblationRow};
pub use gradcheck::{check_gradients, check_model_gradients, GradReport, GRADCHECK_TOLERANCE};
pub use metrics::{metrics_text, KindScore, MetricsRecord};
pub use optim::{clip_global_norm, learning_rate, AdamW};
pub use train::{run_training, train, TrainOutcome};
