//! Mono audio container, 16-bit WAV I/O and deterministic test-signal synthesis.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Canonical internal sample rate.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "clip must contain at least one sample"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Returns a copy with every sample clamped to [-1, 1].
    pub fn clipped(mut self) -> Self {
        for s in &mut self.samples {
            *s = s.clamp(-1.0, 1.0);
        }
        self
    }

    /// Same clip with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Leading `n` samples (or the whole clip when shorter).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            samples: self.samples[..n.min(self.samples.len()).max(1)].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Reads a 16-bit PCM WAV file. Multi-channel input is downmixed by channel mean.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "unsupported encoding: {:?} {}-bit (only 16-bit PCM is accepted)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<i16>, _>>()?;
    if raw.len() < channels {
        return Err(Error::Format("no audio frames".into()));
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV file; samples saturate at the int16 range.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// A pure sine: `amplitude * sin(2π f t / sr)`.
pub fn synth_tone(freq_hz: f64, duration_s: f64, amplitude: f64, sample_rate_hz: u32) -> Result<AudioClip> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(freq_hz > 0.0 && freq_hz < nyquist) {
        return Err(Error::invalid(
            "freq_hz",
            format!("{freq_hz} Hz is outside (0, {nyquist}) Hz"),
        ));
    }
    if !(amplitude > 0.0 && amplitude <= 1.0) {
        return Err(Error::invalid("amplitude", format!("{amplitude} not in (0, 1]")));
    }
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    if n == 0 {
        return Err(Error::invalid("duration_s", "produces zero samples"));
    }
    let w = 2.0 * PI * freq_hz / sample_rate_hz as f64;
    AudioClip::new(
        (0..n).map(|t| amplitude * (w * t as f64).sin()).collect(),
        sample_rate_hz,
    )
}

/// Settings for the toy classification corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate_hz: u32,
    /// Register offset in octaves between neighbouring classes; smaller
    /// values leave classes apart only by timbre and noise colour.
    pub register_step_octaves: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            clips_per_class: 8,
            clip_seconds: 2.0,
            sample_rate_hz: SAMPLE_RATE_HZ,
            register_step_octaves: 1.5,
        }
    }
}

/// One labeled corpus entry.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub id: String,
    pub label: usize,
    pub clip: AudioClip,
}

/// Spectral profile shared by all clips of a class.
#[derive(Debug, Clone, Copy)]
struct ClassProfile {
    center_hz: f64,
    partial_ratios: &'static [f64],
    rolloff: f64,
    noise_tilt: f64,
}

const HARMONIC: &[f64] = &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
const ODD: &[f64] = &[1.0, 3.0, 5.0, 7.0, 9.0];
const BELL: &[f64] = &[1.0, 2.76, 5.40, 8.93];
const NOTE_INTERVALS: [f64; 4] = [0.0, 3.0, 5.0, 7.0];

fn class_profile(k: usize, register_step: f64) -> ClassProfile {
    let shapes = [HARMONIC, ODD, BELL];
    let octave_steps = register_step * (k % 4) as f64 + 0.35 * (k / 4) as f64;
    ClassProfile {
        center_hz: 140.0 * 2f64.powf(octave_steps),
        partial_ratios: shapes[k % 3],
        rolloff: 0.6 + 0.25 * (k % 2) as f64,
        noise_tilt: if k % 2 == 0 { 0.95 } else { -0.6 },
    }
}

/// Generates a labeled corpus of `classes × clips_per_class` clips.
///
/// Each clip is a sequence of four notes drawn from its class's spectral
/// profile (partial layout, register and noise colour), with per-clip
/// transposition, partial weights, level and noise floor.
pub fn synth_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Vec<LabeledClip>> {
    if cfg.classes == 0 || cfg.clips_per_class == 0 {
        return Err(Error::invalid("corpus", "classes and clips_per_class must be positive"));
    }
    if !(cfg.register_step_octaves >= 0.0 && cfg.register_step_octaves.is_finite()) {
        return Err(Error::invalid("register_step_octaves", "must be finite and non-negative"));
    }
    let n = (cfg.clip_seconds * cfg.sample_rate_hz as f64).round() as usize;
    if n < 2048 {
        return Err(Error::invalid("clip_seconds", "clips must hold at least 2048 samples"));
    }
    let mut out = Vec::with_capacity(cfg.classes * cfg.clips_per_class);
    for label in 0..cfg.classes {
        let profile = class_profile(label, cfg.register_step_octaves);
        for i in 0..cfg.clips_per_class {
            let index = (label * cfg.clips_per_class + i) as u64;
            let mut rng = rng::stream(rng::derive_seed(seed, index), rng::tag("corpus"));
            let samples = synth_clip(&profile, n, cfg.sample_rate_hz as f64, &mut rng);
            out.push(LabeledClip {
                id: format!("c{label}_{i:04}"),
                label,
                clip: AudioClip::new(samples, cfg.sample_rate_hz)?,
            });
        }
    }
    Ok(out)
}

fn synth_clip(p: &ClassProfile, n: usize, sr: f64, rng: &mut impl Rng) -> Vec<f64> {
    let transpose = 2f64.powf(rng.gen_range(-3.0..3.0) / 12.0);
    let f0 = p.center_hz * transpose;
    let weights: Vec<f64> = p
        .partial_ratios
        .iter()
        .enumerate()
        .map(|(k, _)| p.rolloff.powi(k as i32) * rng.gen_range(0.5..1.5))
        .collect();
    let note_len = n.div_ceil(NOTE_INTERVALS.len());
    let mut order = NOTE_INTERVALS;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let mut x = vec![0.0; n];
    for (note, &interval) in order.iter().enumerate() {
        let start = note * note_len;
        let end = (start + note_len).min(n);
        let f = f0 * 2f64.powf(interval / 12.0);
        let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
        for (t, xt) in x[start..end].iter_mut().enumerate() {
            let tt = t as f64 / sr;
            let env = (tt / 0.01).min(1.0) * (-tt * 2.5).exp();
            let mut v = 0.0;
            for (r, w) in p.partial_ratios.iter().zip(&weights) {
                let fk = f * r;
                if fk < 0.45 * sr {
                    v += w * (2.0 * PI * fk * tt + phase0 * r).sin();
                }
            }
            *xt = env * v;
        }
    }

    // coloured noise floor
    let floor = 10f64.powf(rng.gen_range(-3.0..-2.0));
    let mut prev = 0.0;
    for xt in x.iter_mut() {
        let w: f64 = StandardNormal.sample(rng);
        prev = p.noise_tilt * prev + w;
        *xt += floor * prev * (1.0 - p.noise_tilt.abs()).sqrt();
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let level = rng.gen_range(0.3..0.8);
    x.iter_mut().for_each(|v| *v *= level / peak);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_rms_and_first_sample() {
        let c = synth_tone(440.0, 1.0, 0.5, 16000).unwrap();
        assert_eq!(c.len(), 16000);
        assert!((c.rms() - 0.5 / 2f64.sqrt()).abs() < 1e-3);
        let c = synth_tone(440.0, 1.0, 1.0, 16000).unwrap();
        assert_eq!(c.samples()[0], 0.0);
    }

    #[test]
    fn tone_rejects_nyquist() {
        assert!(synth_tone(8000.0, 1.0, 0.5, 16000).is_err());
        assert!(synth_tone(0.0, 1.0, 0.5, 16000).is_err());
        assert!(synth_tone(440.0, 1.0, 1.5, 16000).is_err());
    }

    #[test]
    fn clip_rejects_empty_and_nan() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000).is_err());
    }

    #[test]
    fn saturating_quantizer() {
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(-1.0), -32768);
        assert_eq!(quantize(0.5), 16384);
    }

    #[test]
    fn corpus_cardinality_and_determinism() {
        let cfg = CorpusConfig::default();
        let a = synth_corpus(&cfg, 1).unwrap();
        let b = synth_corpus(&cfg, 1).unwrap();
        assert_eq!(a.len(), 32);
        let mut labels: Vec<usize> = a.iter().map(|c| c.label).collect();
        labels.dedup();
        assert_eq!(labels, vec![0, 1, 2, 3]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.clip.samples(), y.clip.samples());
        }
        assert!(a.iter().all(|c| c.clip.peak() <= 0.8 + 1e-12));
    }
}
