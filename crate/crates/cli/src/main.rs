//! `stochpool` command-line tool.

mod commands;
mod recipe;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stochpool::stochastic::Triplet;

use recipe::{ModeName, RunConfig, Source};

#[derive(Parser)]
#[command(
    name = "stochpool",
    version,
    about = "Stochastic compression for transformer speech encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in verification suites.
    Verify(VerifyArgs),
    /// Masked-frame pre-training.
    Pretrain(TrainArgs),
    /// CTC fine-tuning with a fresh head.
    Finetune(TrainArgs),
    /// MACs, wall time and symbol error over operating points.
    Sweep(SweepArgs),
    /// Greedy transcripts of WAV files.
    Decode(DecodeArgs),
    /// Analytic MACs only; runs no model.
    Cost(CostArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Fault {
    /// Upsampling ignores its target length.
    SkipTruncation,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run only checks at or below this dotted name (repeatable), e.g. `pooling`.
    #[arg(long)]
    filter: Vec<String>,
    /// List check names and exit.
    #[arg(long)]
    list: bool,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// tiny, small, B or L.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data source.
    #[arg(long, value_enum)]
    data: Option<Source>,
    /// Seed of the synthetic corpus (defaults to --seed).
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeName>,
    /// Fixed `S_f-S_k-S_q` config for deterministic runs.
    #[arg(long)]
    config: Option<Triplet>,
    /// Squeeze factors sampled in stochastic runs, comma separated.
    #[arg(long, value_delimiter = ',')]
    squeeze: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    kv: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    freeze_feature_extractor: bool,
    #[arg(long)]
    validation_config: Option<Triplet>,
    /// Validate at a freshly sampled config each time (stochastic runs).
    #[arg(long)]
    random_validation: bool,
    #[arg(long)]
    save_every: Option<usize>,
    /// Training manifest (`path<TAB>transcript` per line).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation manifest.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint to start from.
    #[arg(long)]
    init: Option<PathBuf>,
    /// 64-bit state checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model checkpoint; a freshly initialised preset model when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Extra `S_f-S_k-S_q` configs after the standard four, comma separated.
    #[arg(long, value_delimiter = ',')]
    configs: Vec<Triplet>,
    /// Timing repeats per utterance (0 skips timing).
    #[arg(long)]
    repeats: Option<usize>,
    /// Synthetic audio: number of utterances.
    #[arg(long)]
    utterances: Option<usize>,
    /// Synthetic audio: frames per utterance.
    #[arg(long)]
    frames: Option<usize>,
    /// Evaluation manifest.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "1-1-1")]
    config: Triplet,
    /// 16 kHz mono 16-bit WAV files.
    #[arg(required = true)]
    audio: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value = "B")]
    preset: String,
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    /// Extra configs after the standard four, comma separated.
    #[arg(long, value_delimiter = ',')]
    configs: Vec<Triplet>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

fn resolve_common(c: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.recipe {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.preset {
        cfg.preset = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.data {
        cfg.data.source = v;
    }
    if let Some(v) = c.data_seed {
        cfg.data.seed = Some(v);
    }
    cfg.threads = recipe::threads_from_env()?;
    Ok(cfg)
}

fn resolve_train(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = resolve_common(&a.common)?;
    let t = &mut cfg.train;
    if let Some(v) = a.mode {
        t.mode = v;
    }
    if let Some(v) = a.config {
        t.config = v;
    }
    if let Some(v) = &a.squeeze {
        t.squeeze = v.clone();
    }
    if let Some(v) = &a.kv {
        t.kv = v.clone();
    }
    if let Some(v) = &a.q {
        t.q = v.clone();
    }
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = a.validation_config {
        t.validation_config = Some(v);
    }
    if let Some(v) = a.save_every {
        t.save_every = v;
    }
    t.freeze_feature_extractor |= a.freeze_feature_extractor;
    t.random_validation |= a.random_validation;
    if a.train.is_some() || a.val.is_some() {
        cfg.data.source = Source::Manifest;
    }
    if let Some(v) = &a.train {
        cfg.data.train = Some(v.clone());
    }
    if let Some(v) = &a.val {
        cfg.data.val = Some(v.clone());
    }
    if let Some(v) = &a.init {
        cfg.init = Some(v.clone());
    }
    if let Some(v) = &a.resume {
        cfg.resume = Some(v.clone());
    }
    Ok(cfg)
}

fn resolve_sweep(a: &SweepArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = resolve_common(&a.common)?;
    if let Some(v) = &a.checkpoint {
        cfg.init = Some(v.clone());
    }
    cfg.sweep.configs.extend(a.configs.iter().copied());
    if let Some(v) = a.repeats {
        cfg.sweep.repeats = v;
    }
    if let Some(v) = a.utterances {
        cfg.sweep.utterances = v;
    }
    if let Some(v) = a.frames {
        cfg.sweep.frames = v;
    }
    if let Some(v) = &a.test {
        cfg.data.source = Source::Manifest;
        cfg.data.test = Some(v.clone());
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Verify(a) => Ok(commands::verify(&a.filter, a.list, a.inject_fault.is_some())),
        Command::Pretrain(a) => commands::train(commands::Phase::Pretrain, resolve_train(&a)?),
        Command::Finetune(a) => commands::train(commands::Phase::Finetune, resolve_train(&a)?),
        Command::Sweep(a) => commands::sweep(resolve_sweep(&a)?),
        Command::Decode(a) => commands::decode(&a.checkpoint, a.config, &a.audio),
        Command::Cost(a) => commands::cost(&a.preset, a.frames, &a.configs, a.format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
