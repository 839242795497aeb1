//! The six perturbation families, their parameter sampling, and the fixed
//! length parameter vector consumed by the conditioning encoder.
//!
//! | kind                  | parameters                                  |
//! |-----------------------|---------------------------------------------|
//! | `L2Noise`             | `eps_rel` in [0.01, 1.0] (x signal RMS)     |
//! | `LInfNoise`           | `eta_rel` in [0.001, 0.01] (x peak)         |
//! | `BarkBandNoise`       | `band_index` in 0..=23, `scale` in [0.1, 0.5] |
//! | `PitchShift`          | `semitones` in [-5, 5]                      |
//! | `SpeedChange`         | `factor` in [0.80, 1.20]                    |
//! | `DynRangeCompression` | `threshold_dbfs` in [-30, -10], `ratio` in [2, 8] |

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp;
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_CLIP_SAMPLES: usize = 2048;
pub const PARAM_VECTOR_LEN: usize = 10;
pub const KIND_COUNT: usize = 6;
pub const BARK_BANDS: usize = 24;

pub const L2_RANGE: (f64, f64) = (0.01, 1.0);
pub const LINF_RANGE: (f64, f64) = (0.001, 0.01);
pub const BARK_SCALE_RANGE: (f64, f64) = (0.1, 0.5);
pub const PITCH_RANGE: (f64, f64) = (-5.0, 5.0);
pub const SPEED_RANGE: (f64, f64) = (0.80, 1.20);
pub const DRC_THRESHOLD_RANGE: (f64, f64) = (-30.0, -10.0);
pub const DRC_RATIO_RANGE: (f64, f64) = (2.0, 8.0);

/// Zwicker critical-band edges in Hz (25 edges, 24 bands).
const ZWICKER_EDGES: [f64; BARK_BANDS + 1] = [
    20.0, 100.0, 200.0, 300.0, 400.0, 510.0, 630.0, 770.0, 920.0, 1080.0, 1270.0, 1480.0,
    1720.0, 2000.0, 2320.0, 2700.0, 3150.0, 3700.0, 4400.0, 5300.0, 6400.0, 7700.0, 9500.0,
    12000.0, 15500.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationKind {
    L2Noise,
    LInfNoise,
    BarkBandNoise,
    PitchShift,
    SpeedChange,
    DynRangeCompression,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; KIND_COUNT] = [
        PerturbationKind::L2Noise,
        PerturbationKind::LInfNoise,
        PerturbationKind::BarkBandNoise,
        PerturbationKind::PitchShift,
        PerturbationKind::SpeedChange,
        PerturbationKind::DynRangeCompression,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::L2Noise => "L2Noise",
            PerturbationKind::LInfNoise => "LInfNoise",
            PerturbationKind::BarkBandNoise => "BarkBandNoise",
            PerturbationKind::PitchShift => "PitchShift",
            PerturbationKind::SpeedChange => "SpeedChange",
            PerturbationKind::DynRangeCompression => "DynRangeCompression",
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    /// Accepts the canonical names and short aliases (`l2`, `linf`, `bark`, `pitch`, `speed`, `drc`).
    fn from_str(s: &str) -> Result<Self> {
        let k = match s.to_ascii_lowercase().as_str() {
            "l2" | "l2noise" => PerturbationKind::L2Noise,
            "linf" | "linfnoise" => PerturbationKind::LInfNoise,
            "bark" | "barkbandnoise" => PerturbationKind::BarkBandNoise,
            "pitch" | "pitchshift" => PerturbationKind::PitchShift,
            "speed" | "speedchange" => PerturbationKind::SpeedChange,
            "drc" | "dynrangecompression" => PerturbationKind::DynRangeCompression,
            _ => return Err(Error::invalid("kind", format!("unknown perturbation kind '{s}'"))),
        };
        Ok(k)
    }
}

/// Kind plus its parameters. Serializes as `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", deny_unknown_fields)]
pub enum Perturbation {
    L2Noise { eps_rel: f64 },
    LInfNoise { eta_rel: f64 },
    BarkBandNoise { band_index: usize, scale: f64 },
    PitchShift { semitones: f64 },
    SpeedChange { factor: f64 },
    DynRangeCompression { threshold_dbfs: f64, ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub perturbation: Perturbation,
    pub seed: u64,
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

fn unit(v: f64, (lo, hi): (f64, f64)) -> f64 {
    (v - lo) / (hi - lo)
}

impl PerturbationSpec {
    pub fn new(perturbation: Perturbation, seed: u64) -> Result<Self> {
        let spec = Self { perturbation, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> PerturbationKind {
        match self.perturbation {
            Perturbation::L2Noise { .. } => PerturbationKind::L2Noise,
            Perturbation::LInfNoise { .. } => PerturbationKind::LInfNoise,
            Perturbation::BarkBandNoise { .. } => PerturbationKind::BarkBandNoise,
            Perturbation::PitchShift { .. } => PerturbationKind::PitchShift,
            Perturbation::SpeedChange { .. } => PerturbationKind::SpeedChange,
            Perturbation::DynRangeCompression { .. } => PerturbationKind::DynRangeCompression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.perturbation {
            Perturbation::L2Noise { eps_rel } => in_range(eps_rel, L2_RANGE),
            Perturbation::LInfNoise { eta_rel } => in_range(eta_rel, LINF_RANGE),
            Perturbation::BarkBandNoise { band_index, scale } => {
                band_index < BARK_BANDS && in_range(scale, BARK_SCALE_RANGE)
            }
            Perturbation::PitchShift { semitones } => in_range(semitones, PITCH_RANGE),
            Perturbation::SpeedChange { factor } => in_range(factor, SPEED_RANGE),
            Perturbation::DynRangeCompression {
                threshold_dbfs,
                ratio,
            } => in_range(threshold_dbfs, DRC_THRESHOLD_RANGE) && in_range(ratio, DRC_RATIO_RANGE),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "params",
                format!("{:?} outside the allowed range", self.perturbation),
            ))
        }
    }

    /// Parameter slots in [0, 1], in the order used by [`vectorize`].
    fn unit_params(&self) -> [f64; 2] {
        match self.perturbation {
            Perturbation::L2Noise { eps_rel } => [unit(eps_rel, L2_RANGE), 0.0],
            Perturbation::LInfNoise { eta_rel } => [unit(eta_rel, LINF_RANGE), 0.0],
            Perturbation::BarkBandNoise { band_index, scale } => [
                band_index as f64 / (BARK_BANDS - 1) as f64,
                unit(scale, BARK_SCALE_RANGE),
            ],
            Perturbation::PitchShift { semitones } => [unit(semitones, PITCH_RANGE), 0.0],
            Perturbation::SpeedChange { factor } => [unit(factor, SPEED_RANGE), 0.0],
            Perturbation::DynRangeCompression {
                threshold_dbfs,
                ratio,
            } => [
                unit(threshold_dbfs, DRC_THRESHOLD_RANGE),
                unit(ratio, DRC_RATIO_RANGE),
            ],
        }
    }

    /// Strength of the perturbation in [0, 1]: 0 is the weakest setting of its kind.
    pub fn magnitude(&self) -> f64 {
        match self.perturbation {
            Perturbation::L2Noise { eps_rel } => unit(eps_rel, L2_RANGE),
            Perturbation::LInfNoise { eta_rel } => unit(eta_rel, LINF_RANGE),
            Perturbation::BarkBandNoise { scale, .. } => unit(scale, BARK_SCALE_RANGE),
            Perturbation::PitchShift { semitones } => semitones.abs() / PITCH_RANGE.1,
            Perturbation::SpeedChange { factor } => (factor - 1.0).abs() / (SPEED_RANGE.1 - 1.0),
            Perturbation::DynRangeCompression {
                threshold_dbfs,
                ratio,
            } => 0.5 * (1.0 - unit(threshold_dbfs, DRC_THRESHOLD_RANGE)) + 0.5 * unit(ratio, DRC_RATIO_RANGE),
        }
    }
}

/// Draws a spec; the kind is uniform when not given and every parameter is
/// uniform over its range.
pub fn sample_spec(seed: u64, kind: Option<PerturbationKind>) -> PerturbationSpec {
    let mut r = rng::stream(seed, rng::tag("sample_spec"));
    let kind = kind.unwrap_or_else(|| PerturbationKind::ALL[r.gen_range(0..KIND_COUNT)]);
    let u = |r: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| r.gen_range(lo..=hi);
    let perturbation = match kind {
        PerturbationKind::L2Noise => Perturbation::L2Noise {
            eps_rel: u(&mut r, L2_RANGE),
        },
        PerturbationKind::LInfNoise => Perturbation::LInfNoise {
            eta_rel: u(&mut r, LINF_RANGE),
        },
        PerturbationKind::BarkBandNoise => Perturbation::BarkBandNoise {
            band_index: r.gen_range(0..BARK_BANDS),
            scale: u(&mut r, BARK_SCALE_RANGE),
        },
        PerturbationKind::PitchShift => Perturbation::PitchShift {
            semitones: u(&mut r, PITCH_RANGE),
        },
        PerturbationKind::SpeedChange => Perturbation::SpeedChange {
            factor: u(&mut r, SPEED_RANGE),
        },
        PerturbationKind::DynRangeCompression => Perturbation::DynRangeCompression {
            threshold_dbfs: u(&mut r, DRC_THRESHOLD_RANGE),
            ratio: u(&mut r, DRC_RATIO_RANGE),
        },
    };
    PerturbationSpec {
        perturbation,
        seed: rng::derive_seed(seed, rng::tag("noise")),
    }
}

/// Fixed-length encoding: one-hot kind (6 slots) followed by four parameter
/// slots, each parameter mapped affinely onto [0, 1]. Unused slots are 0.
/// The all-zero vector is reserved for "no perturbation information".
pub fn vectorize(spec: &PerturbationSpec) -> [f64; PARAM_VECTOR_LEN] {
    let mut v = [0.0; PARAM_VECTOR_LEN];
    v[spec.kind().index()] = 1.0;
    let p = spec.unit_params();
    v[KIND_COUNT] = p[0];
    v[KIND_COUNT + 1] = p[1];
    v
}

/// The 24 critical bands as `(low, high)` Hz pairs, limited to Nyquist.
/// Edges that would lie at or above Nyquist are replaced by an even
/// subdivision of the remaining range, so all 24 bands stay non-empty.
pub fn bark_band_edges(sample_rate_hz: u32) -> Vec<(f64, f64)> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let mut edges: Vec<f64> = ZWICKER_EDGES.iter().copied().filter(|&e| e < nyquist).collect();
    let missing = ZWICKER_EDGES.len() - edges.len();
    if missing > 0 {
        let last = *edges.last().expect("first edge is below any valid Nyquist");
        let step = (nyquist - last) / missing as f64;
        edges.extend((1..=missing).map(|i| last + step * i as f64));
        *edges.last_mut().unwrap() = nyquist;
    }
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Applies a perturbation. All kinds except `SpeedChange` preserve length;
/// the output is clipped to [-1, 1].
pub fn apply(spec: &PerturbationSpec, clip: &AudioClip) -> Result<AudioClip> {
    Ok(apply_unclipped(spec, clip)?.clipped())
}

/// [`apply`] without the final clipping stage.
pub fn apply_unclipped(spec: &PerturbationSpec, clip: &AudioClip) -> Result<AudioClip> {
    spec.validate()?;
    if clip.len() < MIN_CLIP_SAMPLES {
        return Err(Error::invalid(
            "clip",
            format!("{} samples, need at least {MIN_CLIP_SAMPLES}", clip.len()),
        ));
    }
    let x = clip.samples();
    let sr = clip.sample_rate_hz();
    let out = match spec.perturbation {
        Perturbation::L2Noise { eps_rel } => {
            let mut r = rng::stream(spec.seed, rng::tag("l2"));
            let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
            let budget = eps_rel * clip.rms() * (x.len() as f64).sqrt();
            let k = if norm > 0.0 { budget / norm } else { 0.0 };
            x.iter().zip(&noise).map(|(a, n)| a + k * n).collect()
        }
        Perturbation::LInfNoise { eta_rel } => {
            let mut r = rng::stream(spec.seed, rng::tag("linf"));
            let eta = eta_rel * clip.peak();
            x.iter().map(|a| a + eta * r.gen_range(-1.0..=1.0)).collect()
        }
        Perturbation::BarkBandNoise { band_index, scale } => {
            let (lo, hi) = bark_band_edges(sr)[band_index];
            let mut r = rng::stream(spec.seed, rng::tag("bark"));
            let white: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut r)).collect();
            let noise = dsp::band_filter(&white, sr as f64, lo, hi);
            let target = scale * dsp::band_energy(x, sr as f64, lo, hi);
            let have = noise.iter().map(|v| v * v).sum::<f64>();
            let k = if have > 0.0 { (target / have).sqrt() } else { 0.0 };
            x.iter().zip(&noise).map(|(a, n)| a + k * n).collect()
        }
        Perturbation::PitchShift { semitones } => pitch_shift(x, semitones),
        Perturbation::SpeedChange { factor } => dsp::resample(x, factor),
        Perturbation::DynRangeCompression {
            threshold_dbfs,
            ratio,
        } => compress(x, sr as f64, threshold_dbfs, ratio),
    };
    AudioClip::new(out, sr)
}

fn pitch_shift(x: &[f64], semitones: f64) -> Vec<f64> {
    let r = 2f64.powf(semitones / 12.0);
    let raised = dsp::resample(x, r);
    let mut y = dsp::time_stretch(&raised, 1.0 / r);
    y.resize(x.len(), 0.0);
    y
}

pub const DRC_RMS_MS: f64 = 20.0;
pub const DRC_ATTACK_MS: f64 = 5.0;
pub const DRC_RELEASE_MS: f64 = 50.0;

/// Level in dB relative to a full-scale sine (a sine of peak `a` reads `20 log10 a`).
pub fn level_dbfs(mean_square: f64) -> f64 {
    10.0 * (2.0 * mean_square + 1e-20).log10()
}

/// Feed-forward hard-knee compressor without makeup gain.
///
/// The detector is a one-pole mean-square averager; the static curve maps a
/// level `L` above the threshold `T` to `T + (L - T) / ratio`; the resulting
/// gain in dB is smoothed with separate attack and release time constants.
pub fn compress(x: &[f64], sample_rate_hz: f64, threshold_dbfs: f64, ratio: f64) -> Vec<f64> {
    let coef = |ms: f64| (-1.0 / (ms * 1e-3 * sample_rate_hz)).exp();
    let (avg, attack, release) = (coef(DRC_RMS_MS), coef(DRC_ATTACK_MS), coef(DRC_RELEASE_MS));
    let mut power = 0.0;
    let mut gain_db = 0.0;
    x.iter()
        .map(|&v| {
            power = avg * power + (1.0 - avg) * v * v;
            let level = level_dbfs(power);
            let target = if level > threshold_dbfs {
                threshold_dbfs + (level - threshold_dbfs) / ratio - level
            } else {
                0.0
            };
            let c = if target < gain_db { attack } else { release };
            gain_db = c * gain_db + (1.0 - c) * target;
            v * 10f64.powf(gain_db / 20.0)
        })
        .collect()
}
