//! Seeded corpora of tokenized trajectories.
//!
//! A dataset is two files: `<path>` holds one sequence per line as
//! space-separated decimal token ids, and `<path>.manifest` is `key = value`
//! text recording the seed, counts, per-kind tally, tokenizer and the system
//! behind every sequence. Sequence `i` draws from its own random stream, so
//! the bytes depend only on the config and seed, whatever the thread count.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::systems::{simulate, System, SystemKind, SystemSpec, Trajectory};
use crate::datagen::tokenizer::{tokenize_scaled, TokenizerSpec};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub count: usize,
    pub kinds: Vec<String>,
    pub tokenizer: TokenizerSpec,
    /// Integration step.
    pub dt: f64,
    /// Integration steps between recorded states.
    pub stride: usize,
    pub omega: [f64; 2],
    pub gamma: [f64; 2],
    pub amplitude: [f64; 2],
    pub mu: [f64; 2],
    /// Lorenz states are multiplied by this before quantization.
    pub lorenz_scale: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            count: 100,
            kinds: vec!["harmonic".into(), "damped".into()],
            tokenizer: TokenizerSpec::default(),
            dt: 0.01,
            stride: 5,
            omega: [1.0, 2.0],
            gamma: [0.05, 0.3],
            amplitude: [0.5, 1.4],
            mu: [0.5, 1.5],
            lorenz_scale: 0.05,
        }
    }
}

impl DatagenConfig {
    pub fn system_kinds(&self) -> Result<Vec<SystemKind>> {
        if self.kinds.is_empty() {
            return Err(Error::Config("datagen needs at least one system kind".into()));
        }
        self.kinds.iter().map(|k| k.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.system_kinds()?;
        if self.count == 0 || self.stride == 0 {
            return Err(Error::Config("count and stride must be positive".into()));
        }
        for (name, r) in [
            ("omega", self.omega),
            ("gamma", self.gamma),
            ("amplitude", self.amplitude),
            ("mu", self.mu),
        ] {
            if !(r[0] <= r[1]) || r[0] < 0.0 {
                return Err(Error::Config(format!("bad {name} range {r:?}")));
            }
        }
        Ok(())
    }
}

/// The system and initial condition behind one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMeta {
    pub system: System,
    pub initial: Vec<f64>,
    /// Factor applied to states before quantization.
    pub scale: f64,
}

impl SequenceMeta {
    pub fn kind(&self) -> SystemKind {
        self.system.kind()
    }

    fn to_manifest(&self) -> String {
        let params = match self.system {
            System::Harmonic { omega } => format!("omega={omega}"),
            System::Damped { omega, gamma } => format!("omega={omega} gamma={gamma}"),
            System::VanDerPol { mu } => format!("mu={mu}"),
            System::Lorenz { sigma, rho, beta } => format!("sigma={sigma} rho={rho} beta={beta}"),
        };
        let init: Vec<String> = self.initial.iter().map(f64::to_string).collect();
        format!("{} {params} init={} scale={}", self.kind(), init.join(","), self.scale)
    }

    fn from_manifest(s: &str) -> std::result::Result<Self, String> {
        let mut words = s.split_whitespace();
        let kind: SystemKind = words
            .next()
            .ok_or("empty sequence entry")?
            .parse()
            .map_err(|e: Error| e.to_string())?;
        let mut kv = HashMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| format!("bad field {w:?}"))?;
            kv.insert(k, v);
        }
        let num = |k: &str| -> std::result::Result<f64, String> {
            kv.get(k)
                .ok_or_else(|| format!("missing {k}"))?
                .parse()
                .map_err(|_| format!("bad number for {k}"))
        };
        let system = match kind {
            SystemKind::Harmonic => System::Harmonic { omega: num("omega")? },
            SystemKind::Damped => System::Damped {
                omega: num("omega")?,
                gamma: num("gamma")?,
            },
            SystemKind::VanDerPol => System::VanDerPol { mu: num("mu")? },
            SystemKind::Lorenz => System::Lorenz {
                sigma: num("sigma")?,
                rho: num("rho")?,
                beta: num("beta")?,
            },
        };
        let initial = kv
            .get("init")
            .ok_or("missing init")?
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| format!("bad init value {v:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            system,
            initial,
            scale: num("scale")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub tokenizer: TokenizerSpec,
    pub sequences: Vec<Vec<usize>>,
    pub meta: Vec<SequenceMeta>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn sample_sequence(
    cfg: &DatagenConfig,
    kinds: &[SystemKind],
    seed: u64,
    index: usize,
) -> Result<(Vec<usize>, SequenceMeta)> {
    let mut rng = Rng::stream(seed, index as u64);
    let kind = kinds[rng.below(kinds.len())];
    let range = |rng: &mut Rng, r: [f64; 2]| rng.uniform_range(r[0], r[1]);
    let (system, initial, scale) = match kind {
        SystemKind::Harmonic | SystemKind::Damped => {
            let omega = range(&mut rng, cfg.omega);
            let amp = range(&mut rng, cfg.amplitude);
            let phase = rng.uniform_range(0.0, 2.0 * PI);
            let init = vec![amp * phase.cos(), -amp * omega * phase.sin()];
            let system = if kind == SystemKind::Harmonic {
                System::Harmonic { omega }
            } else {
                System::Damped {
                    omega,
                    gamma: range(&mut rng, cfg.gamma),
                }
            };
            (system, init, 1.0)
        }
        SystemKind::VanDerPol => {
            let mu = range(&mut rng, cfg.mu);
            let init = vec![rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
            (System::VanDerPol { mu }, init, 1.0)
        }
        SystemKind::Lorenz => {
            let init = vec![
                rng.uniform_range(-10.0, 10.0),
                rng.uniform_range(-10.0, 10.0),
                rng.uniform_range(10.0, 30.0),
            ];
            let system = System::Lorenz {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            };
            (system, init, cfg.lorenz_scale)
        }
    };
    let dim = kind.dim();
    let records = (cfg.tokenizer.seq_len - 1).div_ceil(dim);
    let spec = SystemSpec {
        system,
        initial: initial.clone(),
        dt: cfg.dt,
        steps: (records.max(2)) * cfg.stride,
    };
    let traj = simulate(&spec)?;
    let recorded = Trajectory {
        times: traj.times.iter().step_by(cfg.stride).copied().collect(),
        states: traj.states.into_iter().step_by(cfg.stride).collect(),
    };
    let tokens = tokenize_scaled(&recorded, &cfg.tokenizer, scale);
    Ok((tokens, SequenceMeta { system, initial, scale }))
}

pub fn generate_dataset(cfg: &DatagenConfig, seed: u64, exec: Exec) -> Result<Dataset> {
    cfg.validate()?;
    let kinds = cfg.system_kinds()?;
    let rows = exec.try_map_range(cfg.count, |i| sample_sequence(cfg, &kinds, seed, i))?;
    let (sequences, meta) = rows.into_iter().unzip();
    Ok(Dataset {
        seed,
        tokenizer: cfg.tokenizer.clone(),
        sequences,
        meta,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn tally(&self) -> BTreeMap<SystemKind, usize> {
        let mut t = BTreeMap::new();
        for m in &self.meta {
            *t.entry(m.kind()).or_insert(0) += 1;
        }
        t
    }

    pub fn tokens_text(&self) -> String {
        let mut s = String::new();
        for seq in &self.sequences {
            let words: Vec<String> = seq.iter().map(usize::to_string).collect();
            s.push_str(&words.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn manifest_text(&self) -> String {
        let tok = &self.tokenizer;
        let mut s = String::from("# mppa dataset manifest\n");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "count = {}", self.len());
        let kinds: Vec<&str> = self.tally().keys().map(|k| k.name()).collect();
        let _ = writeln!(s, "kinds = {}", kinds.join(","));
        for (k, n) in self.tally() {
            let _ = writeln!(s, "tally.{k} = {n}");
        }
        let _ = writeln!(s, "tokenizer.bins = {}", tok.bins);
        let _ = writeln!(s, "tokenizer.value_min = {}", tok.value_min);
        let _ = writeln!(s, "tokenizer.value_max = {}", tok.value_max);
        let _ = writeln!(s, "tokenizer.seq_len = {}", tok.seq_len);
        let _ = writeln!(s, "tokenizer.bos = {}", tok.bos());
        let _ = writeln!(s, "tokenizer.sep = {}", tok.sep());
        let _ = writeln!(s, "tokenizer.vocab_size = {}", tok.vocab_size());
        let _ = writeln!(s, "tokenizer.interleave = state_major");
        for (i, m) in self.meta.iter().enumerate() {
            let _ = writeln!(s, "seq.{i} = {}", m.to_manifest());
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.tokens_text()).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        fs::write(&mpath, self.manifest_text()).map_err(|e| Error::io(&mpath, e))
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        let mtext = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for line in mtext.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::format(&mpath, format!("bad line {line:?}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::format(&mpath, format!("missing {k}")))
        };
        fn num<T: std::str::FromStr>(p: &Path, k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::format(p, format!("bad value for {k}")))
        }
        let tokenizer = TokenizerSpec {
            value_min: num(&mpath, "value_min", get("tokenizer.value_min")?)?,
            value_max: num(&mpath, "value_max", get("tokenizer.value_max")?)?,
            bins: num(&mpath, "bins", get("tokenizer.bins")?)?,
            seq_len: num(&mpath, "seq_len", get("tokenizer.seq_len")?)?,
        };
        tokenizer.validate()?;
        let seed = num(&mpath, "seed", get("seed")?)?;
        let count: usize = num(&mpath, "count", get("count")?)?;
        let mut sequences = Vec::with_capacity(count);
        for (ln, line) in text.lines().enumerate() {
            let seq = line
                .split_whitespace()
                .map(|w| w.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::format(path, format!("line {}: bad token id", ln + 1)))?;
            if let Some(&bad) = seq.iter().find(|&&t| t >= tokenizer.vocab_size()) {
                return Err(Error::format(
                    path,
                    format!("line {}: token {bad} outside vocabulary", ln + 1),
                ));
            }
            sequences.push(seq);
        }
        if sequences.len() != count {
            return Err(Error::format(
                path,
                format!("manifest says {count} sequences, file has {}", sequences.len()),
            ));
        }
        let meta = (0..count)
            .map(|i| {
                let entry = get(&format!("seq.{i}"))?;
                SequenceMeta::from_manifest(entry).map_err(|r| Error::format(&mpath, format!("seq.{i}: {r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            seed,
            tokenizer,
            sequences,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_partitions_count() {
        let cfg = DatagenConfig {
            count: 40,
            kinds: SystemKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            ..DatagenConfig::default()
        };
        let ds = generate_dataset(&cfg, 7, Exec::Sequential).unwrap();
        assert_eq!(ds.tally().values().sum::<usize>(), 40);
        assert!(ds.sequences.iter().all(|s| s.len() == cfg.tokenizer.seq_len));
    }

    #[test]
    fn meta_round_trips_through_manifest_text() {
        let meta = SequenceMeta {
            system: System::Damped {
                omega: 1.2345678901234567,
                gamma: 0.1,
            },
            initial: vec![0.3, -1.0 / 3.0],
            scale: 1.0,
        };
        assert_eq!(SequenceMeta::from_manifest(&meta.to_manifest()).unwrap(), meta);
    }

    #[test]
    fn rejects_unknown_kind() {
        let cfg = DatagenConfig {
            kinds: vec!["kepler".into()],
            ..DatagenConfig::default()
        };
        assert!(generate_dataset(&cfg, 1, Exec::Sequential).is_err());
    }
}
