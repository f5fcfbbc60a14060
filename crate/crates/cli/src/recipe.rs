//! Run configuration files (TOML). Every key is optional; unknown keys are
//! rejected. Command-line flags override file values, and the resolved
//! configuration is written next to the run's outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stochpool::stochastic::{CompressionConfig, FactorSets, Triplet};
use stochpool::training::{Mode, TrainPlan};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Worker cap from `STOCHPOOL_THREADS`; recorded, all work runs serially.
    pub threads: usize,
    /// Checkpoint to start from (fine-tuning, sweeps).
    pub init: Option<PathBuf>,
    /// 64-bit state checkpoint to continue.
    pub resume: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "tiny".into(),
            seed: 0,
            out: PathBuf::from("runs/latest"),
            threads: 1,
            init: None,
            resume: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: Source,
    /// Seed of the synthetic corpus; the run seed when absent.
    pub seed: Option<u64>,
    /// Manifests of `path<TAB>transcript` lines.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            seed: None,
            train: None,
            val: None,
            test: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: ModeName,
    /// Fixed config of deterministic runs.
    pub config: Triplet,
    /// Factor sets sampled in stochastic runs.
    pub squeeze: Vec<usize>,
    pub kv: Vec<usize>,
    pub q: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub freeze_feature_extractor: bool,
    pub mask_fraction: f64,
    pub mask_span: usize,
    pub eval_every: usize,
    pub validation_config: Option<Triplet>,
    pub random_validation: bool,
    /// Write the resumable state every this many steps (0: only at the end).
    pub save_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = TrainPlan::new(Mode::Deterministic(CompressionConfig::identity(1)), 200, 0);
        Self {
            mode: ModeName::Stochastic,
            config: Triplet::new(1, 1, 1),
            squeeze: vec![1, 2],
            kv: vec![1, 2],
            q: vec![1, 2],
            steps: p.steps,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            warmup_fraction: p.warmup_fraction,
            clip_norm: p.clip_norm,
            freeze_feature_extractor: p.freeze_feature_extractor,
            mask_fraction: p.mask_fraction,
            mask_span: p.mask_span,
            eval_every: p.eval_every,
            validation_config: None,
            random_validation: false,
            save_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn plan(&self, depth: usize, seed: u64) -> Result<TrainPlan> {
        let mode = match self.mode {
            ModeName::Stochastic => Mode::Stochastic(FactorSets::new(
                self.squeeze.clone(),
                self.kv.clone(),
                self.q.clone(),
            )?),
            ModeName::Deterministic => Mode::Deterministic(self.config.config(depth)?),
        };
        let validation_config = self.validation_config.map(|t| t.config(depth)).transpose()?;
        if self.random_validation && self.mode == ModeName::Deterministic {
            bail!("random_validation only applies to stochastic runs");
        }
        let plan = TrainPlan {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            warmup_fraction: self.warmup_fraction,
            clip_norm: self.clip_norm,
            freeze_feature_extractor: self.freeze_feature_extractor,
            mask_fraction: self.mask_fraction,
            mask_span: self.mask_span,
            eval_every: self.eval_every,
            validation_config,
            random_validation: self.random_validation,
            ..TrainPlan::new(mode, self.steps, seed)
        };
        plan.validate(depth)?;
        Ok(plan)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Extra operating points after the four standard ones.
    pub configs: Vec<Triplet>,
    /// Timing repeats per utterance (0 skips timing).
    pub repeats: usize,
    /// Synthetic audio when the model has no head: utterance count and length.
    pub utterances: usize,
    pub frames: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            configs: Vec::new(),
            repeats: 5,
            utterances: 4,
            frames: 200,
        }
    }
}

impl SweepConfig {
    /// The standard four followed by any extra configs not already listed.
    pub fn triplets(&self) -> Vec<Triplet> {
        let mut all = Triplet::STANDARD.to_vec();
        for t in &self.configs {
            if !all.contains(t) {
                all.push(*t);
            }
        }
        all
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read recipe {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid recipe {}", path.display()))
    }

    /// Writes the resolved configuration into the output directory.
    pub fn echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))?;
        let path = self.out.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, toml::to_string(self)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }
}

/// Worker cap from `STOCHPOOL_THREADS` (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("STOCHPOOL_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("STOCHPOOL_THREADS must be a positive integer, got `{v}`"),
        },
    }
}
