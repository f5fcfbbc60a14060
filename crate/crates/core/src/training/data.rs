//! Datasets: synthetic feature corpora, a toy CTC labelling task, and
//! `path<TAB>transcript` manifests of WAV files.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::stochastic::{Purpose, Rng};
use crate::tensor::Tensor;

/// Encoder input: raw 16 kHz audio or precomputed `[T × E]` features.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Audio(Vec<f64>),
    Features(Tensor<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub input: Input,
    /// Label ids, blank excluded (so every id is >= 1). Empty when unlabelled.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    /// Symbol of label id `i + 1`.
    pub symbols: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Output classes including blank.
    pub fn vocab(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }

    /// Renders label ids with the symbol table.
    pub fn render(symbols: &[String], ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| symbols.get(i.wrapping_sub(1)).map_or("?", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Feature sequences for masked-frame pre-training. A few latent sources,
/// each a per-utterance offset plus two slow sines, are mixed into `dim`
/// channels by a basis shared across the corpus, plus channel noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SineFeatures {
    pub dim: usize,
    pub sources: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Standard deviation of each source's per-utterance offset.
    pub offset: f64,
    /// Amplitude of each sine.
    pub amplitude: f64,
    pub noise: f64,
    /// Fixes the mixing basis, shared by every split.
    pub basis_seed: u64,
}

impl SineFeatures {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sources: 8,
            min_frames: 30,
            max_frames: 50,
            offset: 0.0,
            amplitude: 0.7,
            noise: 0.05,
            basis_seed: 0,
        }
    }

    /// `dim × sources` mixing matrix with unit expected row energy.
    pub fn basis(&self) -> Tensor<f64> {
        let mut rng = Rng::keyed(self.basis_seed, Purpose::Data, u64::MAX);
        let std = (1.0 / self.sources as f64).sqrt();
        Tensor::from_fn(&[self.dim, self.sources], |_| std * rng.normal())
    }

    pub fn generate(&self, count: usize, seed: u64) -> Dataset {
        let basis = self.basis();
        let utterances = (0..count)
            .map(|i| {
                let mut rng = Rng::keyed(seed, Purpose::Data, i as u64);
                let frames = self.min_frames + rng.below(self.max_frames - self.min_frames + 1);
                let comps: Vec<(f64, [(f64, f64); 2])> = (0..self.sources)
                    .map(|_| {
                        let offset = self.offset * rng.normal();
                        let sines =
                            [(), ()].map(|_| (0.02 + 0.13 * rng.uniform(), TAU * rng.uniform()));
                        (offset, sines)
                    })
                    .collect();
                let mut data = Vec::with_capacity(frames * self.dim);
                for t in 0..frames {
                    let latent: Vec<f64> = comps
                        .iter()
                        .map(|(offset, sines)| {
                            offset
                                + sines
                                    .iter()
                                    .map(|&(f, p)| self.amplitude * (TAU * f * t as f64 + p).sin())
                                    .sum::<f64>()
                        })
                        .collect();
                    for d in 0..self.dim {
                        let mixed: f64 = basis.row(d).iter().zip(&latent).map(|(m, z)| m * z).sum();
                        data.push(mixed + self.noise * rng.normal());
                    }
                }
                Utterance {
                    id: format!("sine-{i}"),
                    input: Input::Features(
                        Tensor::new(vec![frames, self.dim], data).expect("sized above"),
                    ),
                    labels: Vec::new(),
                }
            })
            .collect();
        Dataset {
            utterances,
            symbols: Vec::new(),
        }
    }
}

/// Toy labelling task: each symbol has a prototype vector; an utterance is
/// a run of noisy prototype segments separated by noise gaps. Prototypes and
/// noise live in a latent space that `basis` (`dim × latent`) maps to the
/// output channels, so the task can share the pre-training corpus's space.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCtcTask {
    pub dim: usize,
    pub basis: Tensor<f64>,
    pub symbols: usize,
    pub min_labels: usize,
    pub max_labels: usize,
    pub segment: (usize, usize),
    pub gap: (usize, usize),
    /// Noise in latent space.
    pub noise: f64,
    /// Noise added per output channel.
    pub channel_noise: f64,
    /// Fixes the prototypes, shared by every split.
    pub task_seed: u64,
}

impl ToyCtcTask {
    /// Task over an identity basis: prototypes directly in feature space.
    pub fn new(dim: usize, task_seed: u64) -> Self {
        let eye = Tensor::from_fn(&[dim, dim], |i| f64::from(u8::from(i / dim == i % dim)));
        Self::with_basis(eye, task_seed)
    }

    /// Task whose latent space is mapped to features by `basis`.
    pub fn with_basis(basis: Tensor<f64>, task_seed: u64) -> Self {
        Self {
            dim: basis.rows(),
            basis,
            symbols: 4,
            min_labels: 2,
            max_labels: 5,
            segment: (5, 8),
            gap: (3, 5),
            noise: 0.5,
            channel_noise: 0.05,
            task_seed,
        }
    }

    fn latent(&self) -> usize {
        self.basis.cols()
    }

    /// Latent prototype of every symbol.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = Rng::keyed(self.task_seed, Purpose::Data, u64::MAX);
        (0..self.symbols)
            .map(|_| (0..self.latent()).map(|_| rng.normal()).collect())
            .collect()
    }

    pub fn symbol_names(&self) -> Vec<String> {
        (0..self.symbols)
            .map(|i| char::from(b'a' + (i % 26) as u8).to_string())
            .collect()
    }

    pub fn generate(&self, count: usize, seed: u64) -> Dataset {
        let protos = self.prototypes();
        let span = |rng: &mut Rng, (lo, hi): (usize, usize)| lo + rng.below(hi - lo + 1);
        let utterances = (0..count)
            .map(|i| {
                let mut rng = Rng::keyed(seed, Purpose::Data, i as u64);
                let n = span(&mut rng, (self.min_labels, self.max_labels));
                let labels: Vec<usize> = (0..n).map(|_| 1 + rng.below(self.symbols)).collect();
                let mut rows: Vec<f64> = Vec::new();
                let k = self.latent();
                let mut push = |rng: &mut Rng, proto: Option<&[f64]>, len: usize| {
                    for _ in 0..len {
                        let z: Vec<f64> = (0..k)
                            .map(|j| proto.map_or(0.0, |p| p[j]) + self.noise * rng.normal())
                            .collect();
                        for d in 0..self.dim {
                            let x: f64 = self.basis.row(d).iter().zip(&z).map(|(m, v)| m * v).sum();
                            rows.push(x + self.channel_noise * rng.normal());
                        }
                    }
                };
                let g = span(&mut rng, self.gap);
                push(&mut rng, None, g);
                for &l in &labels {
                    let s = span(&mut rng, self.segment);
                    push(&mut rng, Some(&protos[l - 1]), s);
                    let g = span(&mut rng, self.gap);
                    push(&mut rng, None, g);
                }
                let frames = rows.len() / self.dim;
                Utterance {
                    id: format!("toy-{i}"),
                    input: Input::Features(
                        Tensor::new(vec![frames, self.dim], rows).expect("sized above"),
                    ),
                    labels,
                }
            })
            .collect();
        Dataset {
            utterances,
            symbols: self.symbol_names(),
        }
    }
}

/// Symbol token for a transcript character; spaces become `|`.
fn token(c: char) -> String {
    if c == ' ' {
        "|".to_string()
    } else {
        c.to_string()
    }
}

/// Loads a manifest of `path<TAB>transcript` lines. Relative paths are
/// resolved against the manifest's directory. Each transcript character is
/// one symbol. With `symbols` given, that table is used instead of building
/// one from the transcripts.
pub fn load_manifest(path: &Path, symbols: Option<&[String]>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        cause: source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, transcript) = line.split_once('\t').ok_or_else(|| {
            Error::Input(format!("{}:{}: expected `path<TAB>transcript`", path.display(), n + 1))
        })?;
        entries.push((base.join(file), transcript.trim().to_string()));
    }
    let table: Vec<String> = match symbols {
        Some(s) => s.to_vec(),
        None => entries
            .iter()
            .flat_map(|(_, t)| t.chars().map(token))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let mut utterances = Vec::with_capacity(entries.len());
    for (file, transcript) in entries {
        let labels = transcript
            .chars()
            .map(|c| {
                let tok = token(c);
                table
                    .iter()
                    .position(|s| *s == tok)
                    .map(|i| i + 1)
                    .ok_or_else(|| Error::Input(format!("symbol `{tok}` is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        utterances.push(Utterance {
            id: file.display().to_string(),
            input: Input::Audio(read_wav(&file)?),
            labels,
        });
    }
    Ok(Dataset {
        utterances,
        symbols: table,
    })
}
