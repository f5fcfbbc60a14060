//! Desk-scale training: masked-frame regression pre-training and CTC
//! fine-tuning, each in stochastic (sampled config per step) or
//! deterministic (one fixed config) mode.

pub mod data;
pub mod optim;
pub mod toy;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use data::{load_manifest, Dataset, Input, SineFeatures, ToyCtcTask, Utterance};
pub use optim::Adam;
pub use toy::ToyBench;

use crate::autodiff::{Tape, Var};
use crate::ctc::{self, check_feasible, ctc_loss, greedy_decode};
use crate::encoder::checkpoint::{TrainingMeta, OPTIM_PREFIX};
use crate::encoder::{Bound, Checkpoint, DType, Encoder, ParamStore};
use crate::error::{Error, Result};
use crate::stochastic::{sample_config, CompressionConfig, FactorSets, Purpose, Rng};
use crate::tensor::Real;

/// How each step's compression config is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    Stochastic(FactorSets),
    Deterministic(CompressionConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaskedRegression,
    Ctc,
}

impl Objective {
    fn phase(self) -> &'static str {
        match self {
            Objective::MaskedRegression => "pretrain",
            Objective::Ctc => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub mode: Mode,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of `steps` spent in linear warm-up; constant afterwards.
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub freeze_feature_extractor: bool,
    pub mask_fraction: f64,
    pub mask_span: usize,
    /// Validate every this many steps (0 disables periodic validation).
    pub eval_every: usize,
    /// Config used for validation; defaults to the fixed config in
    /// deterministic mode and to the identity otherwise.
    pub validation_config: Option<CompressionConfig>,
    /// Stochastic mode only: draw a fresh config from the factor sets for
    /// every validation pass instead of using `validation_config`.
    pub random_validation: bool,
    /// Abort when the loss stays above this multiple of the first loss...
    pub divergence_factor: f64,
    /// ...for this many consecutive steps.
    pub divergence_patience: usize,
}

impl TrainPlan {
    pub fn new(mode: Mode, steps: usize, seed: u64) -> Self {
        Self {
            mode,
            steps,
            batch_size: 4,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            clip_norm: 5.0,
            seed,
            freeze_feature_extractor: false,
            mask_fraction: 0.3,
            mask_span: 3,
            eval_every: 0,
            validation_config: None,
            random_validation: false,
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = (self.warmup_fraction * self.steps as f64).ceil() as usize;
        if step < warm {
            self.learning_rate * (step + 1) as f64 / warm as f64
        } else {
            self.learning_rate
        }
    }

    pub fn config_at(&self, step: usize, depth: usize) -> Result<CompressionConfig> {
        match &self.mode {
            Mode::Deterministic(c) => Ok(c.clone()),
            Mode::Stochastic(sets) => {
                let mut rng = Rng::keyed(self.seed, Purpose::Config, step as u64);
                sample_config(sets, depth, &mut rng)
            }
        }
    }

    pub fn validation_config(&self, depth: usize) -> CompressionConfig {
        match (&self.validation_config, &self.mode) {
            (Some(c), _) => c.clone(),
            (None, Mode::Deterministic(c)) => c.clone(),
            (None, Mode::Stochastic(_)) => CompressionConfig::identity(depth),
        }
    }

    /// Config for the validation pass after `step` steps.
    pub fn validation_config_at(&self, step: usize, depth: usize) -> Result<CompressionConfig> {
        match (&self.mode, self.random_validation) {
            (Mode::Stochastic(sets), true) => {
                let mut rng = Rng::keyed(self.seed, Purpose::Validation, step as u64);
                sample_config(sets, depth, &mut rng)
            }
            _ => Ok(self.validation_config(depth)),
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) || self.mask_span == 0 {
            return Err(Error::Config("mask fraction must be in [0, 1) and span >= 1".into()));
        }
        match &self.mode {
            Mode::Stochastic(sets) => sets.validate(),
            Mode::Deterministic(c) => {
                c.validate()?;
                if c.depth() != depth {
                    return Err(Error::Config(format!(
                        "fixed config has {} layers, encoder has {depth}",
                        c.depth()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub config: String,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
}

/// Writes records as JSON lines.
pub struct JsonlLog<W: Write> {
    out: W,
}

impl<W: Write> JsonlLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &TrainLogRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Turns an utterance's input into an `[T × E]` tape variable.
pub fn input_features<'t, T: Real>(
    encoder: &Encoder<T>,
    bound: &Bound<'t, T>,
    tape: &'t Tape<T>,
    input: &Input,
) -> Result<Var<'t, T>> {
    match input {
        Input::Features(f) => Ok(tape.constant(f.cast())),
        Input::Audio(a) => {
            let samples: Vec<T> = a.iter().map(|&s| T::lit(s)).collect();
            encoder.extract_features(bound, &samples)
        }
    }
}

/// Picks contiguous spans covering about `fraction` of `frames`, at least
/// one frame.
pub fn sample_mask(frames: usize, fraction: f64, span: usize, rng: &mut Rng) -> Vec<bool> {
    let mut mask = vec![false; frames];
    if frames == 0 {
        return mask;
    }
    let spans = ((fraction * frames as f64) / span as f64).ceil().max(1.0) as usize;
    for _ in 0..spans {
        let start = rng.below(frames);
        for m in mask.iter_mut().skip(start).take(span) {
            *m = true;
        }
    }
    mask
}

fn masked_regression<'t>(
    encoder: &Encoder<f64>,
    bound: &Bound<'t, f64>,
    tape: &'t Tape<f64>,
    utt: &Utterance,
    config: &CompressionConfig,
    plan_mask: (f64, usize),
    rng: &mut Rng,
) -> Result<Var<'t, f64>> {
    let feats = input_features(encoder, bound, tape, &utt.input)?;
    let target = feats.detach();
    let mask = sample_mask(feats.value().rows(), plan_mask.0, plan_mask.1, rng);
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let masked = encoder.mask_frames(bound, &feats, &mask)?;
    let out = encoder.encode(bound, &masked, config, None)?;
    let diff = out.gather_rows(&idx)?.sub(&target.gather_rows(&idx)?)?;
    Ok(diff.mul(&diff)?.mean())
}

/// Masked-frame regression loss over a whole dataset with fixed masks, at
/// one config. Used to compare models before and after pre-training.
pub fn masked_regression_loss(
    encoder: &Encoder<f64>,
    data: &Dataset,
    config: &CompressionConfig,
    seed: u64,
) -> Result<f64> {
    data.ensure_nonempty()?;
    let mut total = 0.0;
    for (i, utt) in data.utterances.iter().enumerate() {
        let tape = Tape::no_grad();
        let bound = encoder.params().bind(&tape, |_| false);
        let mut rng = Rng::keyed(seed, Purpose::Validation, i as u64);
        let l = masked_regression(encoder, &bound, &tape, utt, config, (0.3, 3), &mut rng)?;
        total += l.value().item()?;
    }
    Ok(total / data.len() as f64)
}

/// Aggregate decoding metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub loss: f64,
    pub symbol_error: f64,
    pub utterances: usize,
    pub skipped: usize,
    pub wall_ms: f64,
}

/// Fixed-config inference with greedy decoding over a labelled dataset.
pub fn evaluate<T: Real>(
    encoder: &Encoder<T>,
    config: &CompressionConfig,
    data: &Dataset,
) -> Result<EvalReport> {
    data.ensure_nonempty()?;
    let vocab = encoder
        .vocab()
        .ok_or_else(|| Error::Config("evaluation needs a model with a CTC head".into()))?;
    let start = Instant::now();
    let (mut loss, mut errors, mut reference, mut used, mut skipped) = (0.0, 0, 0, 0, 0);
    for utt in &data.utterances {
        let tape = Tape::no_grad();
        let bound = encoder.params().bind(&tape, |_| false);
        let feats = input_features(encoder, &bound, &tape, &utt.input)?;
        let hidden = encoder.encode(&bound, &feats, config, None)?;
        let logits = encoder.head_logits(&bound, &hidden)?;
        let frames = logits.value().rows();
        if check_feasible(frames, &utt.labels, vocab).is_err() {
            skipped += 1;
            continue;
        }
        loss += ctc::ctc_loss_value(logits.value(), &utt.labels)?;
        errors += ctc::edit_distance(&greedy_decode(logits.value()), &utt.labels);
        reference += utt.labels.len();
        used += 1;
    }
    if used == 0 {
        return Err(Error::Input("no utterance has feasible labels".into()));
    }
    Ok(EvalReport {
        config: config.to_string(),
        loss: loss / used as f64,
        symbol_error: if reference == 0 {
            0.0
        } else {
            errors as f64 / reference as f64
        },
        utterances: used,
        skipped,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// A training run in progress. Owns the model exclusively.
pub struct Trainer<'a> {
    pub plan: TrainPlan,
    objective: Objective,
    encoder: Encoder<f64>,
    adam: Adam,
    step: usize,
    train: Vec<&'a Utterance>,
    val: Option<&'a Dataset>,
    initial_loss: Option<f64>,
    diverging_steps: usize,
    best: Option<(f64, ParamStore<f64>)>,
    skipped: usize,
}

impl<'a> Trainer<'a> {
    /// Masked-frame regression on unlabelled data.
    pub fn pretrain(encoder: Encoder<f64>, plan: TrainPlan, data: &'a Dataset) -> Result<Self> {
        data.ensure_nonempty()?;
        plan.validate(encoder.config().depth)?;
        let adam = Adam::new(encoder.params());
        Ok(Self {
            plan,
            objective: Objective::MaskedRegression,
            encoder,
            adam,
            step: 0,
            train: data.utterances.iter().collect(),
            val: None,
            initial_loss: None,
            diverging_steps: 0,
            best: None,
            skipped: 0,
        })
    }

    /// CTC fine-tuning. A fresh linear head over `train.vocab()` classes is
    /// attached (replacing none: the encoder must not have one yet).
    /// Utterances whose labels cannot fit their frame count are skipped.
    pub fn finetune(
        mut encoder: Encoder<f64>,
        plan: TrainPlan,
        train: &'a Dataset,
        val: Option<&'a Dataset>,
    ) -> Result<Self> {
        train.ensure_nonempty()?;
        plan.validate(encoder.config().depth)?;
        encoder.add_head(train.vocab(), plan.seed)?;
        let mut kept = Vec::new();
        let mut skipped = 0;
        for utt in &train.utterances {
            let frames = match &utt.input {
                Input::Features(f) => f.rows(),
                Input::Audio(a) => encoder.config().feature_extractor.frames_for(a.len())?,
            };
            if check_feasible(frames, &utt.labels, train.vocab()).is_ok() {
                kept.push(utt);
            } else {
                skipped += 1;
            }
        }
        if kept.is_empty() {
            return Err(Error::Input(format!(
                "all {skipped} training utterances have infeasible labels"
            )));
        }
        let adam = Adam::new(encoder.params());
        Ok(Self {
            plan,
            objective: Objective::Ctc,
            encoder,
            adam,
            step: 0,
            train: kept,
            val,
            initial_loss: None,
            diverging_steps: 0,
            best: None,
            skipped,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        ck: &Checkpoint,
        plan: TrainPlan,
        train: &'a Dataset,
        val: Option<&'a Dataset>,
    ) -> Result<Self> {
        let meta = ck
            .meta
            .training
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        if ck.dtype != DType::F64 {
            return Err(Error::Checkpoint("resuming needs a 64-bit checkpoint".into()));
        }
        let encoder = ck.to_encoder::<f64>()?;
        let mut trainer = match meta.phase.as_str() {
            "pretrain" => Self::pretrain(encoder, plan, train)?,
            "finetune" => {
                let mut t = Self::finetune(Encoder::new(encoder.config().clone(), 0)?, plan, train, val)?;
                t.encoder = encoder;
                t
            }
            other => return Err(Error::Checkpoint(format!("unknown training phase {other}"))),
        };
        trainer.adam = Adam::load_from(trainer.encoder.params(), ck, meta.step as u64)?;
        trainer.step = meta.step;
        trainer.initial_loss = meta.initial_loss;
        trainer.diverging_steps = meta.diverging_steps;
        trainer.skipped = meta.skipped;
        if let Some(best) = meta.best_val_loss {
            let mut store = trainer.encoder.params().clone();
            for id in store.ids().collect::<Vec<_>>() {
                let key = format!("{OPTIM_PREFIX}best.{}", store.name(id));
                let t = ck
                    .tensor(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
                store.set(id, t.clone())?;
            }
            trainer.best = Some((best, store));
        }
        Ok(trainer)
    }

    pub fn encoder(&self) -> &Encoder<f64> {
        &self.encoder
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.plan.steps
    }

    /// Utterances dropped for infeasible labels.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Everything needed to continue bit-identically, in 64-bit.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_encoder(&self.encoder, DType::F64);
        self.adam.save_into(self.encoder.params(), &mut ck);
        if let Some((_, store)) = &self.best {
            for (name, t) in store.iter() {
                ck.push(format!("{OPTIM_PREFIX}best.{name}"), t);
            }
        }
        ck.meta.training = Some(TrainingMeta {
            phase: self.objective.phase().to_string(),
            step: self.step,
            seed: self.plan.seed,
            initial_loss: self.initial_loss,
            diverging_steps: self.diverging_steps,
            best_val_loss: self.best.as_ref().map(|b| b.0),
            skipped: self.skipped,
        });
        ck
    }

    fn batch_loss<'t>(
        &self,
        bound: &Bound<'t, f64>,
        tape: &'t Tape<f64>,
        config: &CompressionConfig,
    ) -> Result<Var<'t, f64>> {
        let mut batch_rng = Rng::keyed(self.plan.seed, Purpose::Batch, self.step as u64);
        let mut mask_rng = Rng::keyed(self.plan.seed, Purpose::Mask, self.step as u64);
        let mut total: Option<Var<'t, f64>> = None;
        for _ in 0..self.plan.batch_size {
            let utt = self.train[batch_rng.below(self.train.len())];
            let l = match self.objective {
                Objective::MaskedRegression => masked_regression(
                    &self.encoder,
                    bound,
                    tape,
                    utt,
                    config,
                    (self.plan.mask_fraction, self.plan.mask_span),
                    &mut mask_rng,
                )?,
                Objective::Ctc => {
                    let feats = input_features(&self.encoder, bound, tape, &utt.input)?;
                    let hidden = self.encoder.encode(bound, &feats, config, None)?;
                    ctc_loss(&self.encoder.head_logits(bound, &hidden)?, &utt.labels)?
                }
            };
            total = Some(match total {
                None => l,
                Some(t) => t.add(&l)?,
            });
        }
        Ok(total
            .expect("batch size >= 1")
            .scale(1.0 / self.plan.batch_size as f64))
    }

    /// Mean validation CTC loss at the validation config.
    pub fn validation_loss(&self) -> Result<Option<f64>> {
        match (self.val, self.objective) {
            (Some(val), Objective::Ctc) => {
                let cfg = self
                    .plan
                    .validation_config_at(self.step, self.encoder.config().depth)?;
                Ok(Some(evaluate(&self.encoder, &cfg, val)?.loss))
            }
            _ => Ok(None),
        }
    }

    fn track_validation(&mut self) -> Result<Option<f64>> {
        let v = self.validation_loss()?;
        if let Some(v) = v {
            if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
                self.best = Some((v, self.encoder.params().clone()));
            }
        }
        Ok(v)
    }

    /// Runs one optimisation step.
    pub fn step_once(&mut self) -> Result<TrainLogRecord> {
        let start = Instant::now();
        let depth = self.encoder.config().depth;
        let config = self.plan.config_at(self.step, depth)?;
        let freeze = self.plan.freeze_feature_extractor;
        let tape = Tape::new();
        let bound = self
            .encoder
            .params()
            .bind(&tape, |n| !(freeze && Encoder::<f64>::is_feature_extractor_param(n)));
        let loss_var = self.batch_loss(&bound, &tape, &config)?;
        let loss = loss_var.value().item()?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step: self.step,
                reason: format!("non-finite loss {loss} at config {config}"),
            });
        }
        let initial = *self.initial_loss.get_or_insert(loss);
        if loss > self.plan.divergence_factor * initial {
            self.diverging_steps += 1;
            if self.diverging_steps >= self.plan.divergence_patience {
                return Err(Error::Training {
                    step: self.step,
                    reason: format!(
                        "loss {loss:.4} above {}x the initial {initial:.4} for {} steps",
                        self.plan.divergence_factor, self.diverging_steps
                    ),
                });
            }
        } else {
            self.diverging_steps = 0;
        }
        let grads = tape.backward(&loss_var)?;
        let grads = bound.grads(&grads);
        drop(bound);
        let lr = self.plan.lr_at(self.step);
        let grad_norm = self
            .adam
            .step(self.encoder.params_mut(), &grads, lr, self.plan.clip_norm)?;
        if !grad_norm.is_finite() {
            return Err(Error::Training {
                step: self.step,
                reason: format!("non-finite gradient norm at config {config}"),
            });
        }
        self.step += 1;
        let val_loss = if self.plan.eval_every > 0 && self.step.is_multiple_of(self.plan.eval_every) {
            self.track_validation()?
        } else {
            None
        };
        Ok(TrainLogRecord {
            step: self.step - 1,
            config: config.to_string(),
            loss,
            grad_norm,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            val_loss,
        })
    }

    /// Runs the remaining steps, handing every record to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&TrainLogRecord) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let rec = self.step_once()?;
            sink(&rec)?;
        }
        Ok(())
    }

    /// Ends the run. With validation data the parameters with the lowest
    /// validation loss are returned, else the final ones.
    pub fn finish(mut self) -> Result<Encoder<f64>> {
        self.track_validation()?;
        if let Some((_, best)) = self.best.take() {
            *self.encoder.params_mut() = best;
        }
        Ok(self.encoder)
    }
}

/// Runs a whole pre-training plan, returning the model and its log.
pub fn pretrain_toy(
    encoder: Encoder<f64>,
    plan: TrainPlan,
    data: &Dataset,
) -> Result<(Encoder<f64>, Vec<TrainLogRecord>)> {
    let mut trainer = Trainer::pretrain(encoder, plan, data)?;
    let mut log = Vec::new();
    trainer.run(|r| {
        log.push(r.clone());
        Ok(())
    })?;
    Ok((trainer.finish()?, log))
}

/// Runs a whole fine-tuning plan, returning the model and its log.
pub fn finetune(
    encoder: Encoder<f64>,
    plan: TrainPlan,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<(Encoder<f64>, Vec<TrainLogRecord>)> {
    let mut trainer = Trainer::finetune(encoder, plan, train, val)?;
    let mut log = Vec::new();
    trainer.run(|r| {
        log.push(r.clone());
        Ok(())
    })?;
    Ok((trainer.finish()?, log))
}

/// Greedy transcript (label ids) of one input at one config.
pub fn transcribe<T: Real>(
    encoder: &Encoder<T>,
    input: &Input,
    config: &CompressionConfig,
) -> Result<Vec<usize>> {
    let tape = Tape::no_grad();
    let bound = encoder.params().bind(&tape, |_| false);
    let feats = input_features(encoder, &bound, &tape, input)?;
    let hidden = encoder.encode(&bound, &feats, config, None)?;
    Ok(greedy_decode(encoder.head_logits(&bound, &hidden)?.value()))
}
