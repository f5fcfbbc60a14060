//! Encoder hyper-parameters and named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::CompressionConfig;
use crate::tensor::Conv1dSpec;

/// Input sample rate the feature extractor is built for.
pub const SAMPLE_RATE: u32 = 16_000;
/// Product of the feature-extractor strides: 16 kHz in, 50 Hz out.
pub const TOTAL_STRIDE: usize = 320;

/// One convolution of the feature extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

/// Compact convolutional feature extractor: starts narrow and doubles its
/// width every time the cumulative downsampling grows by another factor of 4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorConfig {
    pub base_channels: usize,
    pub layers: Vec<ConvLayerSpec>,
}

impl FeatureExtractorConfig {
    const KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
    const STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];

    /// Seven layers, kernels `10,3,3,3,3,2,2`, strides `5,2,2,2,2,2,2`.
    /// Cumulative strides are 5,10,20,40,80,160,320, so with base width `c`
    /// the widths are `c, c, 2c, 2c, 4c, 4c, 8c`.
    pub fn compact(base_channels: usize) -> Self {
        let mut cumulative = 1;
        let layers = Self::KERNELS
            .iter()
            .zip(Self::STRIDES)
            .map(|(&kernel, stride)| {
                cumulative *= stride;
                let quadruplings = (cumulative / Self::STRIDES[0]).ilog(4);
                ConvLayerSpec {
                    kernel,
                    stride,
                    channels: base_channels << quadruplings,
                }
            })
            .collect();
        Self {
            base_channels,
            layers,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(1, |l| l.channels)
    }

    /// Samples covered by one output frame.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.layers {
            rf += (l.kernel - 1) * jump;
            jump *= l.stride;
        }
        rf
    }

    /// Output length of every layer for `samples` input samples.
    pub fn layer_lengths(&self, samples: usize) -> Result<Vec<usize>> {
        let mut len = samples;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            len = Conv1dSpec::new(l.stride, 0, 1)
                .output_len(len, l.kernel)
                .map_err(|_| {
                    Error::Input(format!(
                        "audio of {samples} samples is shorter than the {}-sample receptive field",
                        self.receptive_field()
                    ))
                })?;
            out.push(len);
        }
        Ok(out)
    }

    pub fn frames_for(&self, samples: usize) -> Result<usize> {
        Ok(*self.layer_lengths(samples)?.last().unwrap_or(&samples))
    }

    /// Fewest samples that produce exactly `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        self.receptive_field() + frames.saturating_sub(1) * self.total_stride()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("feature extractor has no layers".into()));
        }
        if self.total_stride() != TOTAL_STRIDE {
            return Err(Error::Config(format!(
                "feature extractor strides multiply to {}, expected {TOTAL_STRIDE}",
                self.total_stride()
            )));
        }
        if self.layers.iter().any(|l| l.kernel == 0 || l.stride == 0 || l.channels == 0) {
            return Err(Error::Config("feature extractor layer with a zero dimension".into()));
        }
        Ok(())
    }
}

/// Transformer encoder shape plus the largest factors an instance accepts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub name: String,
    pub model_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub pos_conv_kernel: usize,
    pub pos_conv_groups: usize,
    pub feature_extractor: FeatureExtractorConfig,
    pub max_squeeze: usize,
    pub max_kv_pool: usize,
    pub max_q_pool: usize,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    pub fn new(name: &str, model_dim: usize, depth: usize, heads: usize) -> Self {
        Self {
            name: name.to_string(),
            model_dim,
            depth,
            heads,
            ffn_dim: 4 * model_dim,
            pos_conv_kernel: 15,
            pos_conv_groups: 4,
            feature_extractor: FeatureExtractorConfig::compact(8),
            max_squeeze: 3,
            max_kv_pool: 3,
            max_q_pool: 3,
            layer_norm_eps: 1e-5,
        }
    }

    /// Named presets: `B` and `L` follow the base/large shapes, `tiny` and
    /// `small` are desk-scale.
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "tiny" => Self::new("tiny", 64, 2, 4),
            "small" => Self {
                feature_extractor: FeatureExtractorConfig::compact(16),
                ..Self::new("small", 128, 4, 4)
            },
            "B" => Self {
                pos_conv_kernel: 127,
                pos_conv_groups: 16,
                feature_extractor: FeatureExtractorConfig::compact(64),
                ..Self::new("B", 768, 12, 12)
            },
            "L" => Self {
                pos_conv_kernel: 127,
                pos_conv_groups: 16,
                feature_extractor: FeatureExtractorConfig::compact(64),
                ..Self::new("L", 1024, 24, 16)
            },
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 4] = ["tiny", "small", "B", "L"];

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Whether the instance carries the post-squeeze upsampling projection.
    pub fn supports_squeeze(&self) -> bool {
        self.max_squeeze > 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.pos_conv_kernel.is_multiple_of(2) {
            return Err(Error::Config("positional conv kernel must be odd".into()));
        }
        if self.pos_conv_groups == 0 || !self.model_dim.is_multiple_of(self.pos_conv_groups) {
            return Err(Error::Config(format!(
                "positional conv groups {} must divide model dim {}",
                self.pos_conv_groups, self.model_dim
            )));
        }
        if self.max_squeeze == 0 || self.max_kv_pool == 0 || self.max_q_pool == 0 {
            return Err(Error::Config("factor ceilings must be >= 1".into()));
        }
        self.feature_extractor.validate()
    }

    /// Rejects configs whose depth or factors this instance cannot run.
    pub fn check_supports(&self, config: &CompressionConfig) -> Result<()> {
        config.validate()?;
        if config.depth() != self.depth {
            return Err(Error::Config(format!(
                "config has {} layers, encoder has {}",
                config.depth(),
                self.depth
            )));
        }
        let over = |what: &str, got: usize, max: usize| {
            Err(Error::Config(format!("{what} factor {got} exceeds ceiling {max}")))
        };
        if config.s_f > self.max_squeeze {
            return over("squeeze", config.s_f, self.max_squeeze);
        }
        if config.max_kv() > self.max_kv_pool {
            return over("key-value pooling", config.max_kv(), self.max_kv_pool);
        }
        if config.max_q() > self.max_q_pool {
            return over("query pooling", config.max_q(), self.max_q_pool);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_extractor_layer_table() {
        let fe = FeatureExtractorConfig::compact(64);
        assert_eq!(fe.total_stride(), 320);
        let widths: Vec<usize> = fe.layers.iter().map(|l| l.channels).collect();
        assert_eq!(widths, [64, 64, 128, 128, 256, 256, 512]);
        assert_eq!(fe.receptive_field(), 400);
        fe.validate().unwrap();
    }

    #[test]
    fn width_doubles_exactly_at_each_fourfold_downsample() {
        let fe = FeatureExtractorConfig::compact(8);
        let mut cumulative = 1;
        let mut prev: Option<(usize, usize)> = None;
        for l in &fe.layers {
            cumulative *= l.stride;
            if let Some((pc, pw)) = prev {
                let crossed = (cumulative / 5).ilog(4) > (pc / 5).ilog(4);
                assert_eq!(l.channels, if crossed { 2 * pw } else { pw });
            }
            prev = Some((cumulative, l.channels));
        }
    }

    #[test]
    fn one_second_gives_49_frames() {
        let fe = FeatureExtractorConfig::compact(8);
        assert_eq!(fe.frames_for(16_000).unwrap(), 49);
        assert_eq!(fe.frames_for(fe.samples_for(49)).unwrap(), 49);
        assert_eq!(fe.frames_for(fe.samples_for(49) - 1).unwrap(), 48);
        assert!(fe.frames_for(399).is_err());
        assert_eq!(fe.frames_for(400).unwrap(), 1);
    }

    #[test]
    fn presets() {
        let b = EncoderConfig::preset("B").unwrap();
        assert_eq!((b.model_dim, b.depth), (768, 12));
        let l = EncoderConfig::preset("L").unwrap();
        assert_eq!((l.model_dim, l.depth), (1024, 24));
        let t = EncoderConfig::preset("tiny").unwrap();
        assert_eq!((t.model_dim, t.depth, t.heads), (64, 2, 4));
        let s = EncoderConfig::preset("small").unwrap();
        assert_eq!((s.model_dim, s.depth, s.heads), (128, 4, 4));
        for name in EncoderConfig::PRESETS {
            EncoderConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(EncoderConfig::preset("XL"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn ceilings_are_enforced() {
        let cfg = EncoderConfig {
            max_squeeze: 2,
            ..EncoderConfig::preset("tiny").unwrap()
        };
        assert!(cfg.check_supports(&CompressionConfig::fixed(2, 3, 1, 2).unwrap()).is_ok());
        assert!(cfg.check_supports(&CompressionConfig::fixed(3, 1, 1, 2).unwrap()).is_err());
        assert!(cfg.check_supports(&CompressionConfig::fixed(1, 4, 1, 2).unwrap()).is_err());
        assert!(cfg.check_supports(&CompressionConfig::fixed(1, 1, 1, 3).unwrap()).is_err());
    }
}
