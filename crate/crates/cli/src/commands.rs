use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use stochpool::audio::{read_wav, SineSpec};
use stochpool::cost::{self, analytic_cost, CostReport, SweepOptions};
use stochpool::encoder::{Checkpoint, DType, Encoder, EncoderConfig};
use stochpool::stochastic::Triplet;
use stochpool::training::{
    evaluate, load_manifest, transcribe, Dataset, Input, JsonlLog, ToyBench, Trainer, Utterance,
};
use stochpool::{pooling, verify, Error};

use crate::recipe::{RunConfig, Source};
use crate::Format;

pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const LOG_FILE: &str = "train.jsonl";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

/// 2 for usage, configuration and input problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_)
                | Error::Usage(_)
                | Error::Input(_)
                | Error::UnknownPreset(_)
                | Error::Triplet { .. }
                | Error::Checkpoint(_)
                | Error::EmptyDataset
                | Error::Audio(_)
                | Error::Path { .. }
                | Error::Infeasible { .. } => 2,
                _ => 1,
            };
        }
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    1
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn verify(filters: &[String], list: bool, inject_fault: bool) -> ExitCode {
    if inject_fault {
        pooling::inject_skip_truncation(true);
    }
    let checks = match verify::select(filters) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if list {
        for c in &checks {
            println!("{}", c.name);
        }
        return ExitCode::SUCCESS;
    }
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for c in &checks {
        let o = c.run();
        failed += usize::from(!o.passed);
        println!(
            "{}  {:width$}  {:>8.3}s  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn manifest(path: &Option<std::path::PathBuf>, key: &str, symbols: Option<&[String]>) -> Result<Dataset> {
    let path = path
        .as_ref()
        .ok_or_else(|| usage(format!("manifest data needs `data.{key}` (or --{key})")))?;
    Ok(load_manifest(path, symbols)?)
}

/// Training and validation data for a run.
fn training_data(phase: Phase, cfg: &RunConfig, dim: usize) -> Result<(Dataset, Option<Dataset>)> {
    match cfg.data.source {
        Source::Synthetic => {
            let bench = ToyBench::new(dim, cfg.data_seed());
            Ok(match phase {
                Phase::Pretrain => (bench.pretrain, None),
                Phase::Finetune => (bench.train, Some(bench.val)),
            })
        }
        Source::Manifest => {
            let train = manifest(&cfg.data.train, "train", None)?;
            let val = match &cfg.data.val {
                Some(_) => Some(manifest(&cfg.data.val, "val", Some(&train.symbols))?),
                None => None,
            };
            Ok((train, val))
        }
    }
}

fn set_symbols(ck: &mut Checkpoint, symbols: &[String]) {
    if let Some(head) = ck.meta.head.as_mut() {
        if head.symbols.is_empty() {
            head.symbols = symbols.to_vec();
        }
    }
}

pub fn train(phase: Phase, mut cfg: RunConfig) -> Result<ExitCode> {
    let encoder = match (&cfg.resume, &cfg.init) {
        (Some(path), _) => load_checkpoint(path)?.to_encoder::<f64>()?,
        (None, Some(path)) => {
            let enc = load_checkpoint(path)?.to_encoder::<f64>()?;
            if phase == Phase::Finetune && enc.vocab().is_some() {
                return Err(usage(format!(
                    "{} already has a CTC head; fine-tune from a pre-trained checkpoint",
                    path.display()
                )));
            }
            enc
        }
        (None, None) => Encoder::<f64>::from_preset(&cfg.preset, cfg.seed)?,
    };
    cfg.preset = encoder.config().name.clone();
    let depth = encoder.config().depth;
    let plan = cfg.train.plan(depth, cfg.seed)?;
    let (train_set, val_set) = training_data(phase, &cfg, encoder.config().model_dim)?;
    let echo = cfg.echo()?;
    eprintln!("effective config: {}", echo.display());

    let mut trainer = match (&cfg.resume, phase) {
        (Some(path), _) => Trainer::resume(&load_checkpoint(path)?, plan, &train_set, val_set.as_ref())?,
        (None, Phase::Pretrain) => Trainer::pretrain(encoder, plan, &train_set)?,
        (None, Phase::Finetune) => Trainer::finetune(encoder, plan, &train_set, val_set.as_ref())?,
    };
    if trainer.skipped() > 0 {
        eprintln!("skipped {} utterances with infeasible labels", trainer.skipped());
    }
    let log_path = cfg.out.join(LOG_FILE);
    let file = if cfg.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("cannot open {}", log_path.display()))?;
    let mut log = JsonlLog::new(BufWriter::new(file));
    let state_path = cfg.out.join(STATE_FILE);
    let save_state = |t: &Trainer| -> Result<()> {
        let mut ck = t.checkpoint();
        set_symbols(&mut ck, &train_set.symbols);
        ck.save(&state_path)?;
        Ok(())
    };
    let every = (trainer.plan.steps / 10).max(1);
    while !trainer.is_done() {
        let rec = trainer.step_once()?;
        log.write(&rec)?;
        if (rec.step + 1) % every == 0 || trainer.is_done() {
            let val = rec.val_loss.map(|v| format!(" val {v:.4}")).unwrap_or_default();
            eprintln!(
                "step {:>5}/{}  loss {:.4}{val}  config {}",
                rec.step + 1,
                trainer.plan.steps,
                rec.loss,
                rec.config
            );
        }
        if cfg.train.save_every > 0 && trainer.step() % cfg.train.save_every == 0 {
            save_state(&trainer)?;
        }
    }
    log.into_inner().flush()?;
    save_state(&trainer)?;
    let encoder = trainer.finish()?;
    let mut model = Checkpoint::from_encoder(&encoder, DType::F32);
    set_symbols(&mut model, &train_set.symbols);
    model.save(&cfg.out.join(MODEL_FILE))?;
    if let (Phase::Finetune, Some(val)) = (phase, &val_set) {
        for t in Triplet::STANDARD {
            if encoder.config().check_supports(&t.config(depth)?).is_err() {
                continue;
            }
            let r = evaluate(&encoder, &t.config(depth)?, val)?;
            eprintln!("validation {t}: loss {:.4}  symbol error {:.4}", r.loss, r.symbol_error);
        }
    }
    println!("{}", cfg.out.join(MODEL_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn sine_audio(enc: &EncoderConfig, count: usize, frames: usize, seed: u64) -> Dataset {
    let samples = enc.feature_extractor.samples_for(frames);
    Dataset {
        utterances: (0..count)
            .map(|i| Utterance {
                id: format!("sine-{i}"),
                input: Input::Audio(
                    SineSpec {
                        samples,
                        tones: 3,
                        noise: 0.01,
                        seed: seed.wrapping_add(i as u64),
                    }
                    .generate(),
                ),
                labels: Vec::new(),
            })
            .collect(),
        symbols: Vec::new(),
    }
}

pub fn sweep(mut cfg: RunConfig) -> Result<ExitCode> {
    let (encoder, symbols) = match &cfg.init {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let symbols = ck.meta.head.as_ref().map(|h| h.symbols.clone()).unwrap_or_default();
            (ck.to_encoder::<f32>()?, symbols)
        }
        None => (Encoder::<f64>::from_preset(&cfg.preset, cfg.seed)?.cast::<f32>(), Vec::new()),
    };
    cfg.preset = encoder.config().name.clone();
    let depth = encoder.config().depth;
    let configs = cfg
        .sweep
        .triplets()
        .iter()
        .map(|t| t.config(depth))
        .collect::<Result<Vec<_>, _>>()?;
    let data = match cfg.data.source {
        Source::Manifest => {
            let path = cfg.data.test.clone().or_else(|| cfg.data.val.clone());
            let table = (!symbols.is_empty()).then_some(symbols.as_slice());
            manifest(&path, "test", table)?
        }
        Source::Synthetic if encoder.vocab().is_some() => {
            ToyBench::new(encoder.config().model_dim, cfg.data_seed()).test
        }
        Source::Synthetic => {
            if cfg.sweep.utterances == 0 || cfg.sweep.frames == 0 {
                return Err(usage("sweep.utterances and sweep.frames must be >= 1"));
            }
            sine_audio(encoder.config(), cfg.sweep.utterances, cfg.sweep.frames, cfg.data_seed())
        }
    };
    let labelled = data.utterances.iter().all(|u| !u.labels.is_empty());
    let options = SweepOptions {
        repeats: (cfg.sweep.repeats > 0).then_some(cfg.sweep.repeats),
        score: encoder.vocab().is_some() && labelled,
    };
    cfg.echo()?;
    let reports = cost::sweep(&encoder, &configs, &data, options)?;
    let csv_path = cfg.out.join(SWEEP_CSV);
    cost::write_csv(&reports, BufWriter::new(File::create(&csv_path)?))?;
    cost::write_json(&reports, BufWriter::new(File::create(cfg.out.join(SWEEP_JSON))?))?;
    print_table(&reports);
    eprintln!("wrote {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn print_table(reports: &[CostReport]) {
    let base = reports.first().map_or(1, |r| r.macs.total().max(1)) as f64;
    println!(
        "{:<12} {:>16} {:>7} {:>12} {:>12} {:>10}",
        "config", "MACs", "ratio", "wall ms", "decode ms", "sym err"
    );
    for r in reports {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:<12} {:>16} {:>7.3} {:>12} {:>12} {:>10}",
            r.config,
            r.macs.total(),
            r.macs.total() as f64 / base,
            opt(r.wall.map(|w| w.median_ms), 2),
            opt(r.decode.map(|w| w.median_ms), 2),
            opt(r.symbol_error, 4)
        );
    }
}

fn render(symbols: &[String], ids: &[usize]) -> String {
    if symbols.is_empty() {
        return ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    }
    ids.iter()
        .map(|&i| match symbols.get(i - 1).map(String::as_str) {
            Some("|") => " ".to_string(),
            Some(s) => s.to_string(),
            None => format!("<{i}>"),
        })
        .collect()
}

pub fn decode(checkpoint: &Path, triplet: Triplet, audio: &[std::path::PathBuf]) -> Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let head = ck
        .meta
        .head
        .clone()
        .ok_or_else(|| usage(format!("{} has no CTC head", checkpoint.display())))?;
    let encoder = ck.to_encoder::<f64>()?;
    let config = triplet.config(encoder.config().depth)?;
    let mut out = std::io::stdout().lock();
    for path in audio {
        let samples = read_wav(path)?;
        let ids = transcribe(&encoder, &Input::Audio(samples), &config)
            .with_context(|| format!("cannot decode {}", path.display()))?;
        writeln!(out, "{}\t{}", path.display(), render(&head.symbols, &ids))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cost(preset: &str, frames: usize, extra: &[Triplet], format: Format) -> Result<ExitCode> {
    let enc = EncoderConfig::preset(preset)?;
    let mut triplets = Triplet::STANDARD.to_vec();
    triplets.extend(extra.iter().filter(|t| !Triplet::STANDARD.contains(t)));
    let reports = triplets
        .iter()
        .map(|t| Ok(analytic_cost(&t.config(enc.depth)?, &enc, frames)?))
        .collect::<Result<Vec<_>>>()?;
    let stdout = std::io::stdout().lock();
    match format {
        Format::Csv => cost::write_csv(&reports, stdout)?,
        Format::Json => {
            cost::write_json(&reports, stdout)?;
            println!();
        }
        Format::Table => {
            let base = reports[0].macs.total() as f64;
            println!(
                "{:<8} {:>16} {:>7} {:>15} {:>15} {:>15} {:>15} {:>15}",
                "config", "MACs", "ratio", "fe", "attn_proj", "attn_scores", "ffn", "upsample"
            );
            for r in &reports {
                let m = r.macs;
                println!(
                    "{:<8} {:>16} {:>7.3} {:>15} {:>15} {:>15} {:>15} {:>15}",
                    r.config,
                    m.total(),
                    m.total() as f64 / base,
                    m.fe,
                    m.attn_proj,
                    m.attn_scores,
                    m.ffn,
                    m.upsample
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
