//! Analytic multiply-accumulate model, instrumented counts, and wall-time
//! measurement.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{MacBucket, MacCounts, Tape};
use crate::ctc::greedy_decode;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::pooling::pooled_len;
use crate::stochastic::CompressionConfig;
use crate::tensor::{Conv1dSpec, Real};
use crate::training::{evaluate, input_features, Dataset, Input};

/// MACs per component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacBreakdown {
    pub fe: u64,
    pub attn_proj: u64,
    pub attn_scores: u64,
    pub ffn: u64,
    pub upsample: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.fe + self.attn_proj + self.attn_scores + self.ffn + self.upsample
    }

    /// Reads tape counters. Work outside the modelled components (the CTC
    /// head) is rejected so the comparison stays exact.
    pub fn from_counts(c: &MacCounts) -> Result<Self> {
        if c.get(MacBucket::Other) != 0 {
            return Err(Error::Input(format!(
                "{} MACs outside the modelled components",
                c.get(MacBucket::Other)
            )));
        }
        Ok(Self {
            fe: c.get(MacBucket::FeatureExtractor),
            attn_proj: c.get(MacBucket::AttnProjection),
            attn_scores: c.get(MacBucket::AttnScores),
            ffn: c.get(MacBucket::Ffn),
            upsample: c.get(MacBucket::Upsample),
        })
    }

    fn add(&mut self, o: &Self) {
        self.fe += o.fe;
        self.attn_proj += o.attn_proj;
        self.attn_scores += o.attn_scores;
        self.ffn += o.ffn;
        self.upsample += o.upsample;
    }
}

/// Median, min and max over repeats, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Items whose median fell under 100 timer ticks.
    pub low_resolution: usize,
}

impl Timing {
    fn add(&mut self, o: &Self) {
        self.median_ms += o.median_ms;
        self.min_ms += o.min_ms;
        self.max_ms += o.max_ms;
        self.low_resolution += o.low_resolution;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: String,
    pub preset: String,
    pub frames: usize,
    pub macs: MacBreakdown,
    /// Encoder forward time; absent when not measured.
    pub wall: Option<Timing>,
    /// Head projection plus greedy decoding time; absent when not measured.
    pub decode: Option<Timing>,
    pub symbol_error: Option<f64>,
}

/// Closed-form MACs of one forward pass over `frames` frames (including the
/// feature extractor that would produce them from audio).
pub fn analytic_cost(
    config: &CompressionConfig,
    enc: &EncoderConfig,
    frames: usize,
) -> Result<CostReport> {
    analytic(config, enc, frames, true)
}

/// Like [`analytic_cost`] for inputs that are already frame features: the
/// convolutional front end and its projection are left out, the positional
/// convolution stays in `fe`.
pub fn analytic_cost_features(
    config: &CompressionConfig,
    enc: &EncoderConfig,
    frames: usize,
) -> Result<CostReport> {
    analytic(config, enc, frames, false)
}

fn analytic(
    config: &CompressionConfig,
    enc: &EncoderConfig,
    frames: usize,
    from_audio: bool,
) -> Result<CostReport> {
    if frames == 0 {
        return Err(Error::Input("frames must be >= 1".into()));
    }
    enc.check_supports(config)?;
    let e = enc.model_dim as u64;
    let t = frames as u64;
    let tp = pooled_len(frames, config.s_f);
    let tp64 = tp as u64;

    let mut fe = 0u64;
    if from_audio {
        let fe_cfg = &enc.feature_extractor;
        let lens = fe_cfg.layer_lengths(fe_cfg.samples_for(frames))?;
        let mut c_in = 1u64;
        for (l, &len) in fe_cfg.layers.iter().zip(&lens) {
            fe += len as u64 * l.channels as u64 * c_in * l.kernel as u64;
            c_in = l.channels as u64;
        }
        fe += t * c_in * e;
    }
    let pos_len = Conv1dSpec::new(1, enc.pos_conv_kernel / 2, enc.pos_conv_groups)
        .output_len(tp, enc.pos_conv_kernel)?;
    fe += pos_len as u64 * e * (e / enc.pos_conv_groups as u64) * enc.pos_conv_kernel as u64;

    let mut macs = MacBreakdown {
        fe,
        ..Default::default()
    };
    for lf in &config.per_layer {
        macs.attn_proj += 4 * tp64 * e * e;
        let nq = pooled_len(tp, lf.s_q) as u64;
        let nk = pooled_len(tp, lf.s_k) as u64;
        macs.attn_scores += 2 * nq * nk * e;
        macs.ffn += 2 * tp64 * e * enc.ffn_dim as u64;
    }
    if config.s_f > 1 {
        macs.upsample = t * e * e;
    }
    Ok(CostReport {
        config: config.to_string(),
        preset: enc.name.clone(),
        frames,
        macs,
        wall: None,
        decode: None,
        symbol_error: None,
    })
}

/// Counts every multiply-accumulate of a real forward pass from audio
/// producing exactly `frames` frames.
pub fn instrumented_macs<T: Real>(
    encoder: &Encoder<T>,
    config: &CompressionConfig,
    frames: usize,
) -> Result<MacBreakdown> {
    let n = encoder.config().feature_extractor.samples_for(frames);
    let audio: Vec<T> = (0..n).map(|i| T::lit((i as f64 * 0.01).sin())).collect();
    let tape = Tape::no_grad();
    let bound = encoder.params().bind(&tape, |_| false);
    let feats = encoder.extract_features(&bound, &audio)?;
    if feats.value().rows() != frames {
        return Err(Error::Length(format!(
            "{n} samples gave {} frames, expected {frames}",
            feats.value().rows()
        )));
    }
    encoder.encode(&bound, &feats, config, None)?;
    MacBreakdown::from_counts(&tape.macs())
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn summarize(mut samples: Vec<f64>, tick_ms: f64) -> Timing {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    Timing {
        median_ms: median,
        min_ms: samples[0],
        max_ms: samples[n - 1],
        low_resolution: usize::from(median < 100.0 * tick_ms),
    }
}

/// Wall time of the encoder forward and, when a head is present, of the
/// head plus greedy decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub encode: Timing,
    pub decode: Option<Timing>,
}

/// Times a no-grad forward of each input `repeats` times after one untimed
/// warm-up run. Per-item statistics are summed over the inputs. Runs
/// serially on the calling thread.
pub fn measure<T: Real>(
    encoder: &Encoder<T>,
    config: &CompressionConfig,
    inputs: &[Input],
    repeats: usize,
) -> Result<Measurement> {
    if repeats < 3 {
        return Err(Error::Config(format!("need at least 3 repeats, got {repeats}")));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    encoder.config().check_supports(config)?;
    let tick_ms = timer_resolution().as_secs_f64() * 1e3;
    let has_head = encoder.vocab().is_some();
    let mut encode_total: Option<Timing> = None;
    let mut decode_total: Option<Timing> = None;
    for input in inputs {
        let mut enc_ms = Vec::with_capacity(repeats);
        let mut dec_ms = Vec::with_capacity(repeats);
        for rep in 0..=repeats {
            let tape = Tape::no_grad();
            let bound = encoder.params().bind(&tape, |_| false);
            let start = Instant::now();
            let feats = input_features(encoder, &bound, &tape, input)?;
            let hidden = encoder.encode(&bound, &feats, config, None)?;
            let mid = Instant::now();
            if has_head {
                let logits = encoder.head_logits(&bound, &hidden)?;
                std::hint::black_box(greedy_decode(logits.value()));
            }
            let end = Instant::now();
            if rep > 0 {
                enc_ms.push((mid - start).as_secs_f64() * 1e3);
                dec_ms.push((end - mid).as_secs_f64() * 1e3);
            }
        }
        let e = summarize(enc_ms, tick_ms);
        match &mut encode_total {
            Some(t) => t.add(&e),
            None => encode_total = Some(e),
        }
        if has_head {
            let d = summarize(dec_ms, tick_ms);
            match &mut decode_total {
                Some(t) => t.add(&d),
                None => decode_total = Some(d),
            }
        }
    }
    Ok(Measurement {
        encode: encode_total.expect("inputs is non-empty"),
        decode: decode_total,
    })
}

fn frames_of<T: Real>(encoder: &Encoder<T>, input: &Input) -> Result<usize> {
    match input {
        Input::Features(f) => Ok(f.rows()),
        Input::Audio(a) => encoder.config().feature_extractor.frames_for(a.len()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    /// Timing repeats; `None` skips measurement.
    pub repeats: Option<usize>,
    /// Compute symbol error (needs labels and a head).
    pub score: bool,
}

/// One report per config over `data`: analytic MACs summed per utterance
/// (front end included only for audio inputs), optional timing, optional
/// symbol error.
pub fn sweep<T: Real>(
    encoder: &Encoder<T>,
    configs: &[CompressionConfig],
    data: &Dataset,
    options: SweepOptions,
) -> Result<Vec<CostReport>> {
    if configs.is_empty() {
        return Err(Error::Usage("sweep needs at least one config".into()));
    }
    data.ensure_nonempty()?;
    let lens = data
        .utterances
        .iter()
        .map(|u| Ok((frames_of(encoder, &u.input)?, matches!(u.input, Input::Audio(_)))))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<Input> = data.utterances.iter().map(|u| u.input.clone()).collect();
    let mut out = Vec::with_capacity(configs.len());
    for config in configs {
        let mut macs = MacBreakdown::default();
        for &(n, audio) in &lens {
            macs.add(&analytic(config, encoder.config(), n, audio)?.macs);
        }
        let timing = options
            .repeats
            .map(|r| measure(encoder, config, &inputs, r))
            .transpose()?;
        let symbol_error = if options.score {
            Some(evaluate(encoder, config, data)?.symbol_error)
        } else {
            None
        };
        out.push(CostReport {
            config: config.to_string(),
            preset: encoder.config().name.clone(),
            frames: lens.iter().map(|l| l.0).sum(),
            macs,
            wall: timing.as_ref().map(|m| m.encode),
            decode: timing.and_then(|m| m.decode),
            symbol_error,
        });
    }
    Ok(out)
}

/// Column order of the sweep CSV.
pub const CSV_HEADER: [&str; 13] = [
    "config",
    "preset",
    "frames",
    "macs_total",
    "macs_attn_scores",
    "macs_attn_proj",
    "macs_ffn",
    "macs_fe",
    "macs_upsample",
    "wall_ms_median",
    "wall_ms_min",
    "wall_ms_max",
    "symbol_error",
];

/// Flat row with the CSV field names; absent values serialise as empty
/// CSV fields and JSON nulls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub config: String,
    pub preset: String,
    pub frames: usize,
    pub macs_total: u64,
    pub macs_attn_scores: u64,
    pub macs_attn_proj: u64,
    pub macs_ffn: u64,
    pub macs_fe: u64,
    pub macs_upsample: u64,
    pub wall_ms_median: Option<f64>,
    pub wall_ms_min: Option<f64>,
    pub wall_ms_max: Option<f64>,
    pub symbol_error: Option<f64>,
}

impl From<&CostReport> for CostRow {
    fn from(r: &CostReport) -> Self {
        Self {
            config: r.config.clone(),
            preset: r.preset.clone(),
            frames: r.frames,
            macs_total: r.macs.total(),
            macs_attn_scores: r.macs.attn_scores,
            macs_attn_proj: r.macs.attn_proj,
            macs_ffn: r.macs.ffn,
            macs_fe: r.macs.fe,
            macs_upsample: r.macs.upsample,
            wall_ms_median: r.wall.map(|w| w.median_ms),
            wall_ms_min: r.wall.map(|w| w.min_ms),
            wall_ms_max: r.wall.map(|w| w.max_ms),
            symbol_error: r.symbol_error,
        }
    }
}

pub fn write_csv<W: Write>(reports: &[CostReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CostRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CostRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Input(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json<W: Write>(reports: &[CostReport], out: W) -> Result<()> {
    let rows: Vec<CostRow> = reports.iter().map(CostRow::from).collect();
    serde_json::to_writer_pretty(out, &rows)?;
    Ok(())
}
