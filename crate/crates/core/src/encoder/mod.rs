//! Speech encoder: convolutional feature extractor, optional squeeze,
//! positional convolution, post-LN transformer layers with per-layer pooled
//! attention, upsampling back to the input rate, and an optional CTC head.

pub mod checkpoint;
pub mod config;
pub mod params;

pub use checkpoint::{Checkpoint, CheckpointMeta, DType, HeadMeta};
pub use config::{ConvLayerSpec, EncoderConfig, FeatureExtractorConfig, SAMPLE_RATE, TOTAL_STRIDE};
pub use params::{Bound, ParamId, ParamStore};

use crate::attention::{multi_head_pooled, AttentionParams, PoolFactors};
use crate::autodiff::{MacBucket, Tape, Var};
use crate::error::{Error, Result};
use crate::stochastic::{CompressionConfig, LayerFactors, Purpose, Rng};
use crate::tensor::{Conv1dSpec, Real, Tensor};

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    fe_convs: Vec<ParamId>,
    fe_norm: Norm,
    fe_proj: Linear,
    mask_emb: ParamId,
    pos_conv: Linear,
    pos_norm: Norm,
    layers: Vec<Layer>,
    upsample: Option<Linear>,
    head: Option<Linear>,
}

enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

struct Builder<'a, T: Real> {
    store: ParamStore<T>,
    rng: &'a mut Rng,
}

impl<T: Real> Builder<'_, T> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let t = match init {
            Init::Normal(std) => {
                let rng = &mut *self.rng;
                Tensor::from_fn(shape, |_| rng.normal() * std)
            }
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
        };
        self.store.add(name, t)
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.param(
                &format!("{name}.weight"),
                &[d_in, d_out],
                Init::Normal((1.0 / d_in as f64).sqrt()),
            )?,
            b: self.param(&format!("{name}.bias"), &[d_out], Init::Zeros)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.param(&format!("{name}.gamma"), &[d], Init::Ones)?,
            beta: self.param(&format!("{name}.beta"), &[d], Init::Zeros)?,
        })
    }
}

/// Encoder with its parameters. `T` is the parameter precision.
#[derive(Clone, Debug)]
pub struct Encoder<T: Real = f64> {
    config: EncoderConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Encoder<T> {
    /// Fresh encoder, initialised from `seed`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::keyed(seed, Purpose::Init, 0);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let e = config.model_dim;
        let mut fe_convs = Vec::new();
        let mut c_in = 1;
        for (i, l) in config.feature_extractor.layers.iter().enumerate() {
            let fan_in = (c_in * l.kernel) as f64;
            fe_convs.push(b.param(
                &format!("fe.conv{i}.weight"),
                &[l.channels, c_in, l.kernel],
                Init::Normal((2.0 / fan_in).sqrt()),
            )?);
            c_in = l.channels;
        }
        let fe_norm = b.norm("fe.norm", c_in)?;
        let fe_proj = b.linear("fe.proj", c_in, e)?;
        let mask_emb = b.param("mask_emb", &[e], Init::Normal(1.0))?;
        let per_group = e / config.pos_conv_groups;
        let pos_conv = Linear {
            w: b.param(
                "pos_conv.weight",
                &[e, per_group, config.pos_conv_kernel],
                Init::Normal((1.0 / (per_group * config.pos_conv_kernel) as f64).sqrt()),
            )?,
            b: b.param("pos_conv.bias", &[e], Init::Zeros)?,
        };
        let pos_norm = b.norm("pos_norm", e)?;
        let mut layers = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let p = format!("layers.{i}");
            layers.push(Layer {
                q: b.linear(&format!("{p}.attn.q"), e, e)?,
                k: b.linear(&format!("{p}.attn.k"), e, e)?,
                v: b.linear(&format!("{p}.attn.v"), e, e)?,
                o: b.linear(&format!("{p}.attn.o"), e, e)?,
                ln1: b.norm(&format!("{p}.ln1"), e)?,
                ff1: b.linear(&format!("{p}.ffn.1"), e, config.ffn_dim)?,
                ff2: b.linear(&format!("{p}.ffn.2"), config.ffn_dim, e)?,
                ln2: b.norm(&format!("{p}.ln2"), e)?,
            });
        }
        let upsample = if config.supports_squeeze() {
            Some(b.linear("upsample", e, e)?)
        } else {
            None
        };
        let params = b.store;
        Ok(Self {
            config,
            params,
            layout: Layout {
                fe_convs,
                fe_norm,
                fe_proj,
                mask_emb,
                pos_conv,
                pos_norm,
                layers,
                upsample,
                head: None,
            },
        })
    }

    /// Fresh encoder from a named preset.
    pub fn from_preset(name: &str, seed: u64) -> Result<Self> {
        Self::new(EncoderConfig::preset(name)?, seed)
    }

    /// Attaches a fresh linear CTC head over `vocab` symbols (blank included).
    pub fn add_head(&mut self, vocab: usize, seed: u64) -> Result<()> {
        if vocab < 2 {
            return Err(Error::Config(format!("vocabulary of {vocab} needs at least blank and one symbol")));
        }
        if self.layout.head.is_some() {
            return Err(Error::Config("encoder already has a head".into()));
        }
        let mut rng = Rng::keyed(seed, Purpose::Init, 1);
        let mut b = Builder {
            store: std::mem::take(&mut self.params),
            rng: &mut rng,
        };
        let head = b.linear("head", self.config.model_dim, vocab);
        self.params = b.store;
        self.layout.head = Some(head?);
        Ok(())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Output classes of the head, if one is attached.
    pub fn vocab(&self) -> Option<usize> {
        self.layout
            .head
            .map(|h| self.params.get(h.b).len())
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn eps(&self) -> T {
        T::lit(self.config.layer_norm_eps)
    }

    fn linear<'t>(&self, b: &Bound<'t, T>, l: Linear, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(b.var(l.w))?.add_row_bias(b.var(l.b))
    }

    fn norm<'t>(&self, b: &Bound<'t, T>, n: Norm, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(b.var(n.gamma), b.var(n.beta), self.eps())
    }

    /// Raw 16 kHz samples to `[frames × E]` features. The waveform is
    /// normalised to zero mean and unit variance first.
    pub fn extract_features<'t>(&self, b: &Bound<'t, T>, audio: &[T]) -> Result<Var<'t, T>> {
        let fe = &self.config.feature_extractor;
        fe.layer_lengths(audio.len())?;
        let tape = b.var(self.layout.mask_emb).tape();
        let prev = tape.set_bucket(MacBucket::FeatureExtractor);
        let n = T::lit(audio.len() as f64);
        let mean = audio.iter().copied().sum::<T>() / n;
        let var = audio.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>() / n;
        let inv = T::one() / (var + T::lit(1e-5)).sqrt();
        let wave = Tensor::new(
            vec![audio.len(), 1],
            audio.iter().map(|&s| (s - mean) * inv).collect(),
        )?;
        let mut x = tape.constant(wave);
        for (l, &w) in fe.layers.iter().zip(&self.layout.fe_convs) {
            x = x
                .conv1d(b.var(w), None, Conv1dSpec::new(l.stride, 0, 1))?
                .gelu();
        }
        let x = self.norm(b, self.layout.fe_norm, &x)?;
        let out = self.linear(b, self.layout.fe_proj, &x);
        tape.set_bucket(prev);
        out
    }

    /// Replaces flagged frames with the learned mask embedding.
    pub fn mask_frames<'t>(
        &self,
        b: &Bound<'t, T>,
        features: &Var<'t, T>,
        masked: &[bool],
    ) -> Result<Var<'t, T>> {
        features.replace_rows(masked, b.var(self.layout.mask_emb))
    }

    fn positional<'t>(&self, b: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let pc = self.layout.pos_conv;
        let spec = Conv1dSpec::new(1, self.config.pos_conv_kernel / 2, self.config.pos_conv_groups);
        let conv = x.conv1d(b.var(pc.w), Some(b.var(pc.b)), spec)?.gelu();
        self.norm(b, self.layout.pos_norm, &x.add(&conv)?)
    }

    fn layer<'t>(
        &self,
        b: &Bound<'t, T>,
        layer: &Layer,
        x: &Var<'t, T>,
        factors: LayerFactors,
        key_valid: Option<&[bool]>,
    ) -> Result<Var<'t, T>> {
        let attn = AttentionParams {
            w_q: b.var(layer.q.w).clone(),
            b_q: b.var(layer.q.b).clone(),
            w_k: b.var(layer.k.w).clone(),
            b_k: b.var(layer.k.b).clone(),
            w_v: b.var(layer.v.w).clone(),
            b_v: b.var(layer.v.b).clone(),
            w_o: b.var(layer.o.w).clone(),
            b_o: b.var(layer.o.b).clone(),
            heads: self.config.heads,
        };
        let pool = PoolFactors::new(factors.s_q, factors.s_k)?;
        let a = multi_head_pooled(x, &attn, pool, key_valid)?;
        let h = self.norm(b, layer.ln1, &x.add(&a)?)?;
        let prev = x.tape().set_bucket(MacBucket::Ffn);
        let f = self.linear(b, layer.ff1, &h)?.gelu();
        let f = self.linear(b, layer.ff2, &f)?;
        x.tape().set_bucket(prev);
        self.norm(b, layer.ln2, &h.add(&f)?)
    }

    /// Contextual `[T × E]` representations of `[T × E]` features under
    /// `config`. `key_valid` marks real (non-padding) frames.
    pub fn encode<'t>(
        &self,
        b: &Bound<'t, T>,
        features: &Var<'t, T>,
        config: &CompressionConfig,
        key_valid: Option<&[bool]>,
    ) -> Result<Var<'t, T>> {
        self.config.check_supports(config)?;
        let (t, e) = features.value().dims2("encode")?;
        if e != self.config.model_dim {
            return Err(Error::Shape {
                op: "encode",
                lhs: features.shape().to_vec(),
                rhs: vec![t, self.config.model_dim],
            });
        }
        if t == 0 {
            return Err(Error::Input("cannot encode zero frames".into()));
        }
        if let Some(v) = key_valid {
            if v.len() != t {
                return Err(Error::Length(format!("mask has {} entries for {t} frames", v.len())));
            }
        }
        let tape = features.tape();
        let prev = tape.set_bucket(MacBucket::Other);
        let s_f = config.s_f;
        let (mut x, valid) = match (s_f, key_valid) {
            (1, v) => (features.clone(), v.map(<[bool]>::to_vec)),
            (_, Some(v)) => {
                let (x, m) = features.downsample_masked(s_f, v)?;
                (x, Some(m))
            }
            (_, None) => (features.downsample(s_f)?, None),
        };
        tape.set_bucket(MacBucket::FeatureExtractor);
        x = self.positional(b, &x)?;
        tape.set_bucket(MacBucket::Other);
        for (layer, &f) in self.layout.layers.iter().zip(&config.per_layer) {
            x = self.layer(b, layer, &x, f, valid.as_deref())?;
        }
        if s_f > 1 {
            let up = self
                .layout
                .upsample
                .ok_or_else(|| Error::Config("encoder was built without squeeze support".into()))?;
            tape.set_bucket(MacBucket::Upsample);
            x = self.linear(b, up, &x.upsample(s_f, Some(t))?)?;
        }
        tape.set_bucket(prev);
        Ok(x)
    }

    /// Per-frame head scores `[T × V]`.
    pub fn head_logits<'t>(&self, b: &Bound<'t, T>, hidden: &Var<'t, T>) -> Result<Var<'t, T>> {
        let head = self
            .layout
            .head
            .ok_or_else(|| Error::Config("encoder has no CTC head".into()))?;
        let tape = hidden.tape();
        let prev = tape.set_bucket(MacBucket::Other);
        let out = self.linear(b, head, hidden);
        tape.set_bucket(prev);
        out
    }

    /// Audio to representations on a fresh no-grad tape.
    pub fn infer_audio(&self, audio: &[T], config: &CompressionConfig) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let b = self.params.bind(&tape, |_| false);
        let feats = self.extract_features(&b, audio)?;
        Ok(self.encode(&b, &feats, config, None)?.value().clone())
    }

    /// Features to head scores on a fresh no-grad tape.
    pub fn infer_logits(&self, features: &Tensor<T>, config: &CompressionConfig) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let b = self.params.bind(&tape, |_| false);
        let x = tape.constant(features.clone());
        let h = self.encode(&b, &x, config, None)?;
        Ok(self.head_logits(&b, &h)?.value().clone())
    }

    /// Parameter names belonging to the head.
    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    /// Parameter names belonging to the convolutional feature extractor.
    pub fn is_feature_extractor_param(name: &str) -> bool {
        name.starts_with("fe.")
    }

    /// Copies every tensor of `store` into this encoder by name. Names must
    /// match one to one and shapes must agree.
    pub fn load_params(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            self.params
                .set(id, t.clone())
                .map_err(|_| Error::Checkpoint(format!("shape mismatch for {name}")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Encoder<f64> {
        Encoder::from_preset("tiny", 7).unwrap()
    }

    #[test]
    fn output_length_matches_input_for_all_small_factors() {
        let enc = tiny();
        let tape = Tape::no_grad();
        let b = enc.params().bind(&tape, |_| false);
        for t in [1, 2, 5, 7, 10] {
            let feats = tape.constant(Tensor::from_fn(&[t, 64], |i| (i as f64 * 0.37).sin()));
            for s_f in 1..=3 {
                for s_k in 1..=3 {
                    for s_q in 1..=3 {
                        let cfg = CompressionConfig::fixed(s_f, s_k, s_q, 2).unwrap();
                        let out = enc.encode(&b, &feats, &cfg, None).unwrap();
                        assert_eq!(out.shape(), &[t, 64], "T={t} {cfg}");
                        assert!(out.value().is_finite());
                    }
                }
            }
        }
    }

    #[test]
    fn audio_to_frames() {
        let enc = tiny();
        let audio: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.05).sin()).collect();
        let out = enc.infer_audio(&audio, &CompressionConfig::identity(2)).unwrap();
        assert_eq!(out.shape(), &[49, 64]);
        let silent = enc.infer_audio(&vec![0.0; 800], &CompressionConfig::identity(2)).unwrap();
        assert!(silent.is_finite());
        assert!(enc.infer_audio(&vec![0.0; 300], &CompressionConfig::identity(2)).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let enc = tiny();
        let tape = Tape::no_grad();
        let b = enc.params().bind(&tape, |_| false);
        let feats = tape.constant(Tensor::zeros(&[4, 64]));
        let deep = CompressionConfig::identity(3);
        assert!(enc.encode(&b, &feats, &deep, None).is_err());
        let big = CompressionConfig::fixed(4, 1, 1, 2).unwrap();
        assert!(enc.encode(&b, &feats, &big, None).is_err());
        let wrong = tape.constant(Tensor::zeros(&[4, 32]));
        assert!(enc.encode(&b, &wrong, &CompressionConfig::identity(2), None).is_err());
    }

    #[test]
    fn no_squeeze_support_means_no_upsample_params() {
        let cfg = EncoderConfig {
            max_squeeze: 1,
            ..EncoderConfig::preset("tiny").unwrap()
        };
        let enc = Encoder::<f64>::new(cfg, 0).unwrap();
        assert!(enc.params().id("upsample.weight").is_none());
        assert!(tiny().params().id("upsample.weight").is_some());
    }

    #[test]
    fn head_attaches_once() {
        let mut enc = tiny();
        assert_eq!(enc.vocab(), None);
        enc.add_head(5, 1).unwrap();
        assert_eq!(enc.vocab(), Some(5));
        assert!(enc.add_head(5, 1).is_err());
        let logits = enc
            .infer_logits(&Tensor::zeros(&[6, 64]), &CompressionConfig::identity(2))
            .unwrap();
        assert_eq!(logits.shape(), &[6, 5]);
    }
}
