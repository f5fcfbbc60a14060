//! Compression configurations and how they are sampled during training.
//!
//! A [`CompressionConfig`] fixes the squeeze factor for the whole encoder and
//! a `(s_k, s_q)` pooling pair for every transformer layer. In stochastic
//! training a fresh config is drawn per batch: the squeeze factor uniformly
//! from the squeeze set, and every layer's pair independently and uniformly
//! from `kv_set × q_set`.
//!
//! Randomness comes from [`Rng`], a ChaCha stream keyed by `(seed, purpose,
//! index)`. Each consumer owns its own key, so adding draws in one place never
//! shifts the sequence seen by another.

use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a random stream is used for. The discriminant is part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init = 1,
    Config = 2,
    Batch = 3,
    Mask = 4,
    Data = 5,
    Validation = 6,
    Worker = 7,
    Verify = 8,
}

/// Deterministic random stream.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::keyed(seed, Purpose::Init, 0)
    }

    /// Stream for `purpose`, `index` under `seed`. Streams with different keys
    /// are independent.
    pub fn keyed(seed: u64, purpose: Purpose, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((purpose as u64) << 56) ^ index);
        Self { inner }
    }

    /// A child stream for a concurrent worker.
    pub fn for_worker(seed: u64, worker: u64) -> Self {
        Self::keyed(seed, Purpose::Worker, worker)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

/// Pooling factors of one transformer layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerFactors {
    pub s_k: usize,
    pub s_q: usize,
}

/// One forward pass's compression: squeeze factor plus per-layer pooling.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub s_f: usize,
    pub per_layer: Vec<LayerFactors>,
}

impl CompressionConfig {
    /// The same `(s_k, s_q)` on every layer.
    pub fn fixed(s_f: usize, s_k: usize, s_q: usize, depth: usize) -> Result<Self> {
        let cfg = Self {
            s_f,
            per_layer: vec![LayerFactors { s_k, s_q }; depth],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// No compression anywhere.
    pub fn identity(depth: usize) -> Self {
        Self {
            s_f: 1,
            per_layer: vec![LayerFactors { s_k: 1, s_q: 1 }; depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.per_layer.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_layer.is_empty() {
            return Err(Error::Config("compression config needs depth >= 1".into()));
        }
        if self.s_f == 0 || self.per_layer.iter().any(|l| l.s_k == 0 || l.s_q == 0) {
            return Err(Error::Config(format!("factors must be >= 1, got {self}")));
        }
        Ok(())
    }

    /// `true` if every layer uses the same pair.
    pub fn is_uniform(&self) -> bool {
        self.per_layer.windows(2).all(|w| w[0] == w[1])
    }

    pub fn max_kv(&self) -> usize {
        self.per_layer.iter().map(|l| l.s_k).max().unwrap_or(1)
    }

    pub fn max_q(&self) -> usize {
        self.per_layer.iter().map(|l| l.s_q).max().unwrap_or(1)
    }
}

/// Renders `S_f-S_k-S_q`, e.g. `2-2-1`. When layers differ, the `S_k` and
/// `S_q` slots list one value per layer: `2-1,2-2,2`.
impl fmt::Display for CompressionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_uniform() {
            let l = self.per_layer.first().copied().unwrap_or(LayerFactors { s_k: 1, s_q: 1 });
            return write!(f, "{}-{}-{}", self.s_f, l.s_k, l.s_q);
        }
        let join = |get: fn(&LayerFactors) -> usize| {
            self.per_layer
                .iter()
                .map(|l| get(l).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{}-{}-{}", self.s_f, join(|l| l.s_k), join(|l| l.s_q))
    }
}

/// A uniform `S_f-S_k-S_q` operating point, as typed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Triplet {
    pub s_f: usize,
    pub s_k: usize,
    pub s_q: usize,
}

impl Triplet {
    pub const fn new(s_f: usize, s_k: usize, s_q: usize) -> Self {
        Self { s_f, s_k, s_q }
    }

    /// The four operating points compared throughout: 1-1-1, 2-1-1, 2-2-1, 2-2-2.
    pub const STANDARD: [Triplet; 4] = [
        Triplet::new(1, 1, 1),
        Triplet::new(2, 1, 1),
        Triplet::new(2, 2, 1),
        Triplet::new(2, 2, 2),
    ];

    pub fn config(&self, depth: usize) -> Result<CompressionConfig> {
        CompressionConfig::fixed(self.s_f, self.s_k, self.s_q, depth)
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.s_f, self.s_k, self.s_q)
    }
}

impl FromStr for Triplet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |position: usize, reason: &str| Error::Triplet {
            input: s.to_string(),
            position,
            reason: reason.to_string(),
        };
        let mut values = [0usize; 3];
        let mut offset = 0;
        let mut parts = s.split('-');
        for v in values.iter_mut() {
            let part = parts
                .next()
                .ok_or_else(|| err(s.len(), "expected three `-`-separated factors"))?;
            if let Some(bad) = part.find(|c: char| !c.is_ascii_digit()) {
                return Err(err(offset + bad, "factor must be a positive integer"));
            }
            *v = part
                .parse()
                .map_err(|_| err(offset, "factor must be a positive integer"))?;
            if *v == 0 {
                return Err(err(offset, "factor must be >= 1"));
            }
            offset += part.len() + 1;
        }
        if parts.next().is_some() {
            return Err(err(offset - 1, "expected exactly three factors"));
        }
        Ok(Triplet::new(values[0], values[1], values[2]))
    }
}

impl TryFrom<String> for Triplet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Triplet> for String {
    fn from(t: Triplet) -> String {
        t.to_string()
    }
}

/// Candidate factors sampled during training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSets {
    pub squeeze: Vec<usize>,
    pub kv: Vec<usize>,
    pub q: Vec<usize>,
}

impl FactorSets {
    pub fn new(squeeze: Vec<usize>, kv: Vec<usize>, q: Vec<usize>) -> Result<Self> {
        let sets = Self { squeeze, kv, q };
        sets.validate()?;
        Ok(sets)
    }

    /// `{1..=s_f}`, `{1..=s_k}`, `{1..=s_q}`.
    pub fn up_to(s_f: usize, s_k: usize, s_q: usize) -> Result<Self> {
        Self::new((1..=s_f).collect(), (1..=s_k).collect(), (1..=s_q).collect())
    }

    pub fn singleton(t: Triplet) -> Self {
        Self {
            squeeze: vec![t.s_f],
            kv: vec![t.s_k],
            q: vec![t.s_q],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in [("squeeze", &self.squeeze), ("kv", &self.kv), ("q", &self.q)] {
            if set.is_empty() {
                return Err(Error::Config(format!("{name} factor set is empty")));
            }
            if set.contains(&0) {
                return Err(Error::Config(format!("{name} factor set contains 0")));
            }
        }
        Ok(())
    }
}

/// Draws one configuration: squeeze uniform over its set, then each layer's
/// `(s_k, s_q)` independently and uniformly.
pub fn sample_config(sets: &FactorSets, depth: usize, rng: &mut Rng) -> Result<CompressionConfig> {
    sets.validate()?;
    if depth == 0 {
        return Err(Error::Config("depth must be >= 1".into()));
    }
    let s_f = *rng.choose(&sets.squeeze);
    let per_layer = (0..depth)
        .map(|_| LayerFactors {
            s_k: *rng.choose(&sets.kv),
            s_q: *rng.choose(&sets.q),
        })
        .collect();
    Ok(CompressionConfig { s_f, per_layer })
}

/// Pearson chi-square statistic and upper-tail p-value for `counts` against a
/// uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let k = counts.len();
    let total: u64 = counts.iter().sum();
    if k < 2 || total == 0 {
        return (0.0, 1.0);
    }
    let expected = total as f64 / k as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("k >= 2");
    (stat, 1.0 - dist.cdf(stat))
}
