//! Frame-level embedding sequences: the frozen toy encoder and the `PEMB`
//! binary format for embeddings computed elsewhere.
//!
//! `PEMB` layout (little-endian): magic `PEMB`, `u32` version (1), `u32` T,
//! `u32` D, `f32` frame rate in Hz, then `T * D` `f32` values in row-major
//! order (one row per frame).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::audio::AudioClip;
use crate::dsp::{hann, FftPair};
use crate::error::{Error, Result};
use crate::rng;

/// Embedding width of the encoder side.
pub const ENCODER_DIM: usize = 768;
/// Samples per toy-encoder frame (20 ms at 16 kHz).
pub const FRAME_SAMPLES: usize = 320;
pub const MEL_BANDS: usize = 64;
const FFT_SIZE: usize = 512;
/// Additive floor inside the log of band energies.
pub const ENERGY_FLOOR: f64 = 1e-8;

pub const PEMB_MAGIC: &[u8; 4] = b"PEMB";
pub const PEMB_VERSION: u32 = 1;

/// A `T x D` sequence of frame embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    data: Array2<f32>,
    frame_rate_hz: f32,
}

impl EmbeddingSequence {
    pub fn new(data: Array2<f32>, frame_rate_hz: f32) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("embeddings", "need at least one frame and one dimension"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("embedding entries".into()));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::invalid("frame_rate_hz", format!("{frame_rate_hz}")));
        }
        Ok(Self { data, frame_rate_hz })
    }

    pub fn data(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_rate_hz(&self) -> f32 {
        self.frame_rate_hz
    }

    /// Mean over frames.
    pub fn pooled(&self) -> Vec<f64> {
        self.data
            .mapv(|v| v as f64)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .to_vec()
    }
}

/// Serializes a sequence into `PEMB` bytes.
pub fn encode_embeddings(seq: &EmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * seq.data.len());
    out.extend_from_slice(PEMB_MAGIC);
    out.extend_from_slice(&PEMB_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&seq.frame_rate_hz.to_le_bytes());
    for v in seq.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses `PEMB` bytes. When `expected_dim` is given, a different D is an error.
pub fn decode_embeddings(bytes: &[u8], expected_dim: Option<usize>) -> Result<EmbeddingSequence> {
    if bytes.len() < 20 {
        return Err(Error::Format("embedding header truncated".into()));
    }
    if &bytes[..4] != PEMB_MAGIC {
        return Err(Error::Format(format!(
            "bad embedding magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != PEMB_VERSION {
        return Err(Error::Format(format!("unsupported embedding version {version}")));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let frame_rate = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if let Some(want) = expected_dim {
        if d != want {
            return Err(Error::Shape(format!("embedding dimension {d}, expected {want}")));
        }
    }
    let need = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("embedding header overflows".into()))?;
    let payload = &bytes[20..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "embedding payload truncated: header promises {t}x{d} values, file holds {} bytes",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(Error::Format("trailing bytes after embedding payload".into()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((t, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    EmbeddingSequence::new(data, frame_rate)
}

pub fn write_embeddings(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_embeddings(seq))?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_embeddings(&buf, None)
}

/// Frozen frame encoder standing in for a pretrained audio model.
///
/// Each 320-sample frame is Hann-windowed, transformed with a 512-point FFT,
/// pooled into 64 mel-spaced triangular band energies, log-compressed, and
/// lifted to 768 dimensions by a fixed matrix with orthonormal rows drawn once
/// from the encoder seed. Nothing about it is trainable.
#[derive(Clone)]
pub struct ToyEncoder {
    seed: u64,
    sample_rate_hz: u32,
    window: Vec<f64>,
    /// `MEL_BANDS x (FFT_SIZE/2 + 1)`
    mel: Array2<f64>,
    /// `MEL_BANDS x ENCODER_DIM`, orthonormal rows.
    lift: Array2<f64>,
    fft: FftPair,
}

/// Intermediate values kept by [`ToyEncoder::encode_with_cache`] for the backward pass.
pub struct EncoderCache {
    spectra: Vec<Vec<Complex64>>,
    energies: Array2<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn mel_matrix(sample_rate_hz: u32) -> Array2<f64> {
    let bins = FFT_SIZE / 2 + 1;
    let nyq = sample_rate_hz as f64 / 2.0;
    let top = hz_to_mel(nyq);
    let points: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / FFT_SIZE as f64;
    let mut w = Array2::zeros((MEL_BANDS, bins));
    for b in 0..MEL_BANDS {
        let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let v = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            w[[b, k]] = v;
        }
        if w.row(b).sum() == 0.0 {
            let k = ((mid / bin_hz).round() as usize).min(bins - 1);
            w[[b, k]] = 1.0;
        }
    }
    w
}

fn orthonormal_lift(seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, rng::tag("toy_encoder"));
    let mut m = Array2::<f64>::zeros((MEL_BANDS, ENCODER_DIM));
    for i in 0..MEL_BANDS {
        let mut v: Vec<f64> = (0..ENCODER_DIM).map(|_| StandardNormal.sample(&mut r)).collect();
        for _ in 0..2 {
            for j in 0..i {
                let row = m.row(j);
                let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(row.iter()).for_each(|(x, a)| *x -= dot * a);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        m.row_mut(i).iter_mut().zip(&v).for_each(|(dst, x)| *dst = x / norm);
    }
    m
}

impl ToyEncoder {
    pub fn new(seed: u64, sample_rate_hz: u32) -> Self {
        Self {
            seed,
            sample_rate_hz,
            window: hann(FRAME_SAMPLES),
            mel: mel_matrix(sample_rate_hz),
            lift: orthonormal_lift(seed),
            fft: FftPair::new(FFT_SIZE),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame_rate_hz(&self) -> f32 {
        self.sample_rate_hz as f32 / FRAME_SAMPLES as f32
    }

    /// Orthonormal-row lifting matrix (`64 x 768`).
    pub fn lift(&self) -> ArrayView2<'_, f64> {
        self.lift.view()
    }

    fn check(&self, clip: &AudioClip) -> Result<usize> {
        if clip.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::invalid(
                "sample_rate_hz",
                format!("encoder runs at {} Hz, clip is {} Hz", self.sample_rate_hz, clip.sample_rate_hz()),
            ));
        }
        let t = clip.len() / FRAME_SAMPLES;
        if t == 0 {
            return Err(Error::invalid(
                "clip",
                format!("{} samples is shorter than one {FRAME_SAMPLES}-sample frame", clip.len()),
            ));
        }
        Ok(t)
    }

    /// Log mel band energies, `T x 64`.
    pub fn features(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        Ok(self.encode_with_cache(clip)?.0)
    }

    /// Returns the log band energies (`T x 64`) together with the backward cache.
    pub fn encode_with_cache(&self, clip: &AudioClip) -> Result<(Array2<f64>, EncoderCache)> {
        let t = self.check(clip)?;
        let x = clip.samples();
        let bins = FFT_SIZE / 2 + 1;
        let mut energies = Array2::zeros((t, MEL_BANDS));
        let mut spectra = Vec::with_capacity(t);
        for f in 0..t {
            let frame: Vec<f64> = x[f * FRAME_SAMPLES..(f + 1) * FRAME_SAMPLES]
                .iter()
                .zip(&self.window)
                .map(|(a, w)| a * w)
                .collect();
            let spec = self.fft.forward_real(&frame);
            let power: Vec<f64> = spec[..bins]
                .iter()
                .map(|c| c.norm_sqr() / FRAME_SAMPLES as f64)
                .collect();
            for b in 0..MEL_BANDS {
                energies[[f, b]] = self.mel.row(b).iter().zip(&power).map(|(w, p)| w * p).sum();
            }
            spectra.push(spec);
        }
        let feats = energies.mapv(|e: f64| (e + ENERGY_FLOOR).ln());
        Ok((feats, EncoderCache { spectra, energies }))
    }

    /// Encodes a clip into a `T x 768` sequence at 50 frames per second (16 kHz).
    pub fn encode(&self, clip: &AudioClip) -> Result<EmbeddingSequence> {
        let feats = self.features(clip)?;
        self.lift_features(&feats)
    }

    pub fn lift_features(&self, feats: &Array2<f64>) -> Result<EmbeddingSequence> {
        let e = feats.dot(&self.lift);
        EmbeddingSequence::new(e.mapv(|v| v as f32), self.frame_rate_hz())
    }

    /// Gradient of a scalar with respect to the waveform, given its gradient
    /// with respect to the `T x 768` embeddings.
    pub fn backward(&self, clip_len: usize, cache: &EncoderCache, d_embed: ArrayView2<'_, f64>) -> Vec<f64> {
        let bins = FFT_SIZE / 2 + 1;
        let d_feat = d_embed.dot(&self.lift.t());
        let mut grad = vec![0.0; clip_len];
        for (f, spec) in cache.spectra.iter().enumerate() {
            let d_energy: Vec<f64> = (0..MEL_BANDS)
                .map(|b| d_feat[[f, b]] / (cache.energies[[f, b]] + ENERGY_FLOOR))
                .collect();
            let mut c = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
            for k in 0..bins {
                let a: f64 = (0..MEL_BANDS).map(|b| self.mel[[b, k]] * d_energy[b]).sum::<f64>()
                    / FRAME_SAMPLES as f64;
                c[k] = spec[k].conj() * a;
            }
            self.fft.forward(&mut c);
            let base = f * FRAME_SAMPLES;
            for n in 0..FRAME_SAMPLES {
                grad[base + n] = 2.0 * c[n].re * self.window[n];
            }
        }
        grad
    }
}

/// Convenience wrapper around [`ToyEncoder::encode`].
pub fn toy_encode(clip: &AudioClip, encoder_seed: u64) -> Result<EmbeddingSequence> {
    ToyEncoder::new(encoder_seed, clip.sample_rate_hz()).encode(clip)
}
