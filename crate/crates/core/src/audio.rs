//! Audio ingestion. Only 16 kHz mono 16-bit PCM WAV is accepted; there is
//! no resampling.

use std::path::Path;

use crate::encoder::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::stochastic::{Purpose, Rng};

/// Reads a WAV file as samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Path {
            path: path.display().to_string(),
            cause: source,
        },
        other => Error::Audio(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let bad = |what: String| Err(Error::Audio(format!("{}: {what}", path.display())));
    if spec.channels != 1 {
        return bad(format!("expected mono, found {} channels", spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return bad(format!(
            "expected {SAMPLE_RATE} Hz, found {} Hz (resampling is not supported)",
            spec.sample_rate
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return bad(format!(
            "expected 16-bit PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        ));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| f64::from(v) / 32768.0)
                .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Writes 16 kHz mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Seeded sum-of-sines plus Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SineSpec {
    pub samples: usize,
    pub tones: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SineSpec {
    pub fn generate(&self) -> Vec<f64> {
        let mut rng = Rng::keyed(self.seed, Purpose::Data, 0);
        let tones: Vec<(f64, f64, f64)> = (0..self.tones)
            .map(|_| {
                let freq = 80.0 + 3_920.0 * rng.uniform();
                let phase = std::f64::consts::TAU * rng.uniform();
                let amp = 0.5 * rng.uniform() / self.tones.max(1) as f64;
                (freq, phase, amp)
            })
            .collect();
        let rate = f64::from(SAMPLE_RATE);
        (0..self.samples)
            .map(|i| {
                let t = i as f64 / rate;
                let tone: f64 = tones
                    .iter()
                    .map(|&(f, p, a)| a * (std::f64::consts::TAU * f * t + p).sin())
                    .sum();
                tone + self.noise * rng.normal()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_and_format_checks() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.wav");
        let sig = SineSpec {
            samples: 1600,
            tones: 3,
            noise: 0.01,
            seed: 4,
        }
        .generate();
        write_wav(&good, &sig).unwrap();
        let back = read_wav(&good).unwrap();
        assert_eq!(back.len(), sig.len());
        assert!(back.iter().zip(&sig).all(|(a, b)| (a - b).abs() < 1e-4));

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::Audio(m)) if m.contains("mono")));

        let slow = dir.path().join("r.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8_000,
            ..spec
        };
        let mut w = hound::WavWriter::create(&slow, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&slow), Err(Error::Audio(m)) if m.contains("16000")));

        let missing = dir.path().join("nope.wav");
        let err = read_wav(&missing).unwrap_err().to_string();
        assert!(err.contains("nope.wav"));
    }

    #[test]
    fn generator_is_seeded() {
        let spec = SineSpec {
            samples: 500,
            tones: 4,
            noise: 0.1,
            seed: 9,
        };
        assert_eq!(spec.generate(), spec.generate());
        let other = SineSpec { seed: 10, ..spec.clone() };
        assert_ne!(spec.generate(), other.generate());
    }
}
