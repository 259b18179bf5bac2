//! TOML run configuration.
//!
//! ```toml
//! [model]        # ModelConfig fields; `preset` picks the starting point
//! [optimizer]    # lr, steps, batch_size, weight_decay, warmup_steps, ...
//! [data]         # train / val dataset paths
//! [output]       # metrics / checkpoint paths
//! [datagen]      # DatagenConfig for the `datagen` subcommand
//! [eval]         # max_sequences, decode_samples
//! [audit]        # trials, seq_len, seed
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::DatagenConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Cosine decay ends at `lr * min_lr_ratio`.
    pub min_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            steps: 500,
            batch_size: 16,
            weight_decay: 0.02,
            warmup_steps: 25,
            min_lr_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 42,
            eval_every: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps, batch_size and eval_every must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            metrics: PathBuf::from("metrics.txt"),
            checkpoint: PathBuf::from("model.ckpt"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate at most this many sequences (0 = all).
    pub max_sequences: usize,
    /// Sequences scored by greedy completion of their second half.
    pub decode_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_sequences: 0,
            decode_samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub trials: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seq_len: 64,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
    pub datagen: DatagenConfig,
    pub eval: EvalConfig,
    pub audit: AuditConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            output: OutputConfig::default(),
            datagen: DatagenConfig::default(),
            eval: EvalConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    model: Option<toml::Table>,
    #[serde(default)]
    optimizer: OptimizerConfig,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default)]
    datagen: DatagenConfig,
    #[serde(default)]
    eval: EvalConfig,
    #[serde(default)]
    audit: AuditConfig,
}

fn model_from_table(mut table: toml::Table) -> Result<ModelConfig> {
    let preset = match table.remove("preset") {
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(Error::Config(format!("model.preset must be a string, got {other}"))),
        None => "desk".to_string(),
    };
    let base = ModelConfig::preset(&preset)?;
    let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in table {
        merged.insert(k, v);
    }
    merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("[model]: {}", e.message())))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let model = match raw.model {
            Some(t) => model_from_table(t)?,
            None => ModelConfig::desk(),
        };
        let cfg = Self {
            model,
            optimizer: raw.optimizer,
            data: raw.data,
            output: raw.output,
            datagen: raw.datagen,
            eval: raw.eval,
            audit: raw.audit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.datagen.validate()?;
        if self.audit.trials == 0 {
            return Err(Error::Config("audit.trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
