use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mppa::datagen::{generate_dataset, manifest_path, Dataset};
use mppa::harness::{
    ablate, ablation_table, audit, check_gradients, evaluate, load_checked, metrics_text, run_training, AuditKind,
    RunConfig,
};
use mppa::model::{Ablation, Component, Gating, ModelConfig, Variant};
use mppa::par::Exec;
use mppa::Error;

#[derive(Parser)]
#[command(name = "mppa", version, about = "Train, evaluate and audit MPPA sequence models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (datagen, eval, ablate, audit, gradcheck) or directory (train).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    gating: Option<Gating>,
    /// Turn a component off; repeatable.
    #[arg(long, global = true)]
    disable: Vec<Component>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate physical systems and write a token dataset.
    Datagen {
        /// Number of sequences (overrides datagen.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model; writes metrics.txt and model.ckpt.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Perplexity and decoded-trajectory scores of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint with each component forced to zero in turn.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Perturbation audits of causality and chunk delays.
    Audit {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck,
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::ConfigMismatch(_)
            | Error::InvalidArgument(_)
            | Error::Io { .. }
            | Error::Format { .. }
            | Error::TokenOutOfRange { .. } => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

impl Common {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    fn run_config(&self, default_model: ModelConfig) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig {
                model: default_model,
                ..RunConfig::default()
            },
        };
        if let Some(seed) = self.seed {
            cfg.optimizer.seed = seed;
            cfg.model.init_seed = seed;
            cfg.audit.seed = seed;
        }
        self.apply_model_flags(&mut cfg.model);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_model_flags(&self, model: &mut ModelConfig) {
        if let Some(v) = self.variant {
            *model = match v {
                Variant::Baseline => model.clone().baseline(),
                Variant::Mppa => ModelConfig {
                    variant: Variant::Mppa,
                    ..model.clone()
                },
            };
        }
        if let Some(g) = self.gating {
            model.gating = g;
        }
        for &c in &self.disable {
            model.set_enabled(c, false);
        }
    }
}

fn write_out(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| {
            Failure::from(Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn datagen(common: &Common, count: Option<usize>) -> CliResult {
    let mut cfg = common.run_config(ModelConfig::desk())?;
    if let Some(c) = count {
        cfg.datagen.count = c;
    }
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("datagen needs --out <path>".into()))?;
    let seed = common.seed.unwrap_or(cfg.optimizer.seed);
    let ds = generate_dataset(&cfg.datagen, seed, common.exec())?;
    ds.write(out)?;
    let tally: Vec<String> = ds.tally().iter().map(|(k, n)| format!("{}={n}", k.name())).collect();
    println!(
        "wrote {} sequences to {} ({}), manifest {}",
        ds.len(),
        out.display(),
        tally.join(" "),
        manifest_path(out).display()
    );
    Ok(())
}

fn train(common: &Common, train: Option<PathBuf>, val: Option<PathBuf>) -> CliResult {
    let mut cfg = common.run_config(ModelConfig::desk())?;
    if train.is_some() {
        cfg.data.train = train;
    }
    if val.is_some() {
        cfg.data.val = val;
    }
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| {
            Failure::from(Error::Io {
                path: dir.clone(),
                source: e,
            })
        })?;
        cfg.output.metrics = dir.join("metrics.txt");
        cfg.output.checkpoint = dir.join("model.ckpt");
    }
    let outcome = run_training(&cfg, common.exec())?;
    for r in &outcome.records {
        println!("{}", r.to_line());
    }
    println!(
        "trained {} steps in {:.1}s; metrics {}, checkpoint {}",
        cfg.optimizer.steps,
        outcome.seconds,
        cfg.output.metrics.display(),
        cfg.output.checkpoint.display()
    );
    Ok(())
}

fn expected_model(common: &Common) -> Result<Option<ModelConfig>, Failure> {
    match &common.config {
        Some(_) => Ok(Some(common.run_config(ModelConfig::desk())?.model)),
        None => Ok(None),
    }
}

fn eval_config(common: &Common) -> Result<mppa::harness::EvalConfig, Failure> {
    Ok(match &common.config {
        Some(p) => RunConfig::load(p)?.eval,
        None => Default::default(),
    })
}

fn eval(common: &Common, checkpoint: &Path, data: &Path) -> CliResult {
    // --disable at eval time zero-forces components of a trained model; any
    // --config must describe the checkpoint as trained.
    let expected = match &common.config {
        Some(_) => {
            let plain = Common {
                disable: Vec::new(),
                ..common.clone()
            };
            Some(plain.run_config(ModelConfig::desk())?.model)
        }
        None => None,
    };
    let model = load_checked(checkpoint, expected.as_ref())?;
    let dataset = Dataset::read(data)?;
    let mut ablation = Ablation::none();
    for &c in &common.disable {
        ablation = Ablation {
            zero: std::array::from_fn(|i| ablation.zero[i] || Ablation::zeroing(c).zero[i]),
        };
    }
    let rec = evaluate(&model, &dataset, &eval_config(common)?, ablation, common.exec())?;
    write_out(common.out.as_deref(), &metrics_text(std::slice::from_ref(&rec)))
}

fn ablate_cmd(common: &Common, checkpoint: &Path, data: &Path) -> CliResult {
    let model = load_checked(checkpoint, expected_model(common)?.as_ref())?;
    let dataset = Dataset::read(data)?;
    let rows = ablate(&model, &dataset, &eval_config(common)?, common.exec())?;
    print!("{}", ablation_table(&rows));
    let records: Vec<_> = rows.into_iter().map(|r| r.record).collect();
    if let Some(out) = &common.out {
        write_out(Some(out), &metrics_text(&records))?;
    }
    Ok(())
}

fn audit_cmd(common: &Common, trials: Option<usize>) -> CliResult {
    let mut cfg = common.run_config(ModelConfig::desk())?;
    if let Some(t) = trials {
        cfg.audit.trials = t;
    }
    let mut text = String::new();
    let mut failed = false;
    for kind in [
        AuditKind::FullStack,
        AuditKind::EnergyDelay,
        AuditKind::PeriodicityDelay,
    ] {
        let report = audit(kind, &cfg.model, &cfg.audit, common.exec())?;
        failed |= !report.passed();
        text.push_str(&format!("{report}\n"));
    }
    if cfg.model.gating == Gating::SequenceMean {
        text.push_str("note: sequence_mean gates read the whole sequence; full_stack violations are expected\n");
    }
    write_out(common.out.as_deref(), &text)?;
    if common.out.is_some() {
        print!("{text}");
    }
    if failed {
        Err(Failure::Check("causality audit failed".into()))
    } else {
        Ok(())
    }
}

fn gradcheck_cmd(common: &Common) -> CliResult {
    let cfg = common.run_config(ModelConfig::gradcheck_toy())?;
    let seed = common.seed.unwrap_or(cfg.model.init_seed);
    let report = check_gradients(&cfg.model, seed, common.exec())?;
    let text = format!("{report}\n");
    write_out(common.out.as_deref(), &text)?;
    if common.out.is_some() {
        print!("{text}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:.3e} is not below {:e}",
            report.max_error(),
            mppa::harness::GRADCHECK_TOLERANCE
        )))
    }
}

fn run(cli: Cli) -> CliResult {
    let common = &cli.common;
    match cli.command {
        Command::Datagen { count } => datagen(common, count),
        Command::Train { train: t, val } => train(common, t, val),
        Command::Eval { checkpoint, data } => eval(common, &checkpoint, &data),
        Command::Ablate { checkpoint, data } => ablate_cmd(common, &checkpoint, &data),
        Command::Audit { trials } => audit_cmd(common, trials),
        Command::Gradcheck => gradcheck_cmd(common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
