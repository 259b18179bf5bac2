use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-position gate input is pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// Mean of rows `0..=t` for position `t`; causal.
    #[default]
    CausalPrefix,
    /// Mean over the whole sequence for every position. Leaks future tokens
    /// into earlier gates; kept only to study that failure mode.
    SequenceMean,
}

impl fmt::Display for Gating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gating::CausalPrefix => "causal_prefix",
            Gating::SequenceMean => "sequence_mean",
        })
    }
}

impl FromStr for Gating {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal_prefix" => Ok(Gating::CausalPrefix),
            "sequence_mean" => Ok(Gating::SequenceMean),
            _ => Err(Error::Config(format!("unknown gating mode {s:?}"))),
        }
    }
}

/// `Mppa` fuses all three components through sigmoid gates; `Baseline` is
/// the same scaffold with attention only and an ungated residual `x + Z`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Mppa,
    Baseline,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mppa => "mppa",
            Variant::Baseline => "baseline",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mppa" => Ok(Variant::Mppa),
            "baseline" => Ok(Variant::Baseline),
            _ => Err(Error::Config(format!("unknown model variant {s:?}"))),
        }
    }
}

/// The three fusable components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Gravitator,
    Energy,
    Periodicity,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Gravitator, Component::Energy, Component::Periodicity];

    pub fn name(self) -> &'static str {
        match self {
            Component::Gravitator => "gravitator",
            Component::Energy => "energy",
            Component::Periodicity => "periodicity",
        }
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown component {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub chunk_size: usize,
    pub n_max: usize,
    pub d_ff: usize,
    /// Hidden width of the spectral modulation MLP.
    pub mlp_hidden: usize,
    pub enable_gravitator: bool,
    pub enable_energy: bool,
    pub enable_periodicity: bool,
    pub gating: Gating,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, width 32, 4 heads, chunk 8, vocab 64,
    /// 128 positions.
    pub fn desk() -> Self {
        Self {
            variant: Variant::Mppa,
            vocab_size: 64,
            d: 32,
            layers: 2,
            heads: 4,
            chunk_size: 8,
            n_max: 128,
            d_ff: 128,
            mlp_hidden: 64,
            enable_gravitator: true,
            enable_energy: true,
            enable_periodicity: true,
            gating: Gating::CausalPrefix,
            init_seed: 42,
        }
    }

    /// Small configuration used for finite-difference gradient checks.
    pub fn gradcheck_toy() -> Self {
        Self {
            vocab_size: 32,
            d: 16,
            layers: 2,
            heads: 2,
            chunk_size: 8,
            n_max: 32,
            d_ff: 64,
            mlp_hidden: 32,
            ..Self::desk()
        }
    }

    /// Full-size shape (12 layers, width 1024, 16 heads, chunk 16). Buildable,
    /// not trained here.
    pub fn paper() -> Self {
        Self {
            vocab_size: 50257,
            d: 1024,
            layers: 12,
            heads: 16,
            chunk_size: 16,
            n_max: 1024,
            d_ff: 4096,
            mlp_hidden: 2048,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "gradcheck_toy" => Ok(Self::gradcheck_toy()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown model preset {name:?}"))),
        }
    }

    pub fn baseline(mut self) -> Self {
        self.variant = Variant::Baseline;
        self.enable_energy = false;
        self.enable_periodicity = false;
        self.enable_gravitator = true;
        self
    }

    pub fn is_enabled(&self, c: Component) -> bool {
        match c {
            Component::Gravitator => self.enable_gravitator,
            Component::Energy => self.enable_energy,
            Component::Periodicity => self.enable_periodicity,
        }
    }

    pub fn set_enabled(&mut self, c: Component, on: bool) {
        match c {
            Component::Gravitator => self.enable_gravitator = on,
            Component::Energy => self.enable_energy = on,
            Component::Periodicity => self.enable_periodicity = on,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.d == 0 || self.layers == 0 || self.d_ff == 0 || self.mlp_hidden == 0 {
            return fail("vocab_size, d, layers, d_ff and mlp_hidden must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d={} is not divisible by heads={}", self.d, self.heads));
        }
        if !self.chunk_size.is_power_of_two() {
            return fail(format!("chunk_size={} is not a power of two", self.chunk_size));
        }
        if self.n_max < self.chunk_size {
            return fail(format!(
                "n_max={} is smaller than chunk_size={}",
                self.n_max, self.chunk_size
            ));
        }
        if !(self.enable_gravitator || self.enable_energy || self.enable_periodicity) {
            return fail("at least one component must be enabled".into());
        }
        if self.variant == Variant::Baseline
            && (self.enable_energy || self.enable_periodicity || !self.enable_gravitator)
        {
            return fail("the baseline variant uses the gravitator only".into());
        }
        Ok(())
    }

    /// Flat key/value form, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        vec![
            kv("variant", self.variant.to_string()),
            kv("vocab_size", self.vocab_size.to_string()),
            kv("d", self.d.to_string()),
            kv("layers", self.layers.to_string()),
            kv("heads", self.heads.to_string()),
            kv("chunk_size", self.chunk_size.to_string()),
            kv("n_max", self.n_max.to_string()),
            kv("d_ff", self.d_ff.to_string()),
            kv("mlp_hidden", self.mlp_hidden.to_string()),
            kv("enable_gravitator", self.enable_gravitator.to_string()),
            kv("enable_energy", self.enable_energy.to_string()),
            kv("enable_periodicity", self.enable_periodicity.to_string()),
            kv("gating", self.gating.to_string()),
            kv("init_seed", self.init_seed.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        let mut c = Self::desk();
        for (k, v) in pairs {
            match k.as_str() {
                "variant" => c.variant = v.parse()?,
                "vocab_size" => c.vocab_size = parse(k, v)?,
                "d" => c.d = parse(k, v)?,
                "layers" => c.layers = parse(k, v)?,
                "heads" => c.heads = parse(k, v)?,
                "chunk_size" => c.chunk_size = parse(k, v)?,
                "n_max" => c.n_max = parse(k, v)?,
                "d_ff" => c.d_ff = parse(k, v)?,
                "mlp_hidden" => c.mlp_hidden = parse(k, v)?,
                "enable_gravitator" => c.enable_gravitator = parse(k, v)?,
                "enable_energy" => c.enable_energy = parse(k, v)?,
                "enable_periodicity" => c.enable_periodicity = parse(k, v)?,
                "gating" => c.gating = v.parse()?,
                "init_seed" => c.init_seed = parse(k, v)?,
                _ => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        Ok(c)
    }

    /// Names of fields that differ between two configs.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, b)| format!("{}: {} != {}", a.0, a.1, b.1))
            .collect()
    }
}
