//! Spectral building blocks shared by the perturbation, encoder and metric code:
//! windows, STFT/ISTFT, band-limited resampling, a phase vocoder and
//! FFT-mask band filtering.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub const STFT_SIZE: usize = 1024;
pub const STFT_HOP: usize = 256;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Planned forward/inverse transforms of one size.
#[derive(Clone)]
pub struct FftPair {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    /// Forward transform of a real signal (zero-padded or truncated to `n`).
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = (0..self.n)
            .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// Unnormalized inverse transform, real part only, divided by `n`.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }
}

/// Centered STFT: the signal is zero-padded by `size/2` on both sides.
/// Returns frames of the one-sided spectrum (`size/2 + 1` bins).
pub fn stft(x: &[f64], size: usize, hop: usize) -> Vec<Vec<Complex64>> {
    let fft = FftPair::new(size);
    let win = hann(size);
    let pad = size / 2;
    let padded_len = x.len() + 2 * pad;
    let n_frames = 1 + padded_len.saturating_sub(size) / hop;
    (0..n_frames)
        .map(|f| {
            let start = f * hop;
            let frame: Vec<f64> = (0..size)
                .map(|i| {
                    let j = (start + i) as isize - pad as isize;
                    if j >= 0 && (j as usize) < x.len() {
                        x[j as usize] * win[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut spec = fft.forward_real(&frame);
            spec.truncate(size / 2 + 1);
            spec
        })
        .collect()
}

/// Weighted overlap-add inverse of [`stft`], producing exactly `len` samples.
pub fn istft(frames: &[Vec<Complex64>], size: usize, hop: usize, len: usize) -> Vec<f64> {
    let fft = FftPair::new(size);
    let win = hann(size);
    let pad = size / 2;
    let total = frames.len().saturating_sub(1) * hop + size;
    let mut acc = vec![0.0; total.max(len + 2 * pad)];
    let mut norm = vec![0.0; acc.len()];
    for (f, half) in frames.iter().enumerate() {
        let mut full = vec![Complex64::new(0.0, 0.0); size];
        for (k, c) in half.iter().enumerate().take(size / 2 + 1) {
            full[k] = *c;
            if k > 0 && k < size - k {
                full[size - k] = c.conj();
            }
        }
        let frame = fft.inverse_real(full);
        let start = f * hop;
        for i in 0..size {
            acc[start + i] += frame[i] * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    (0..len)
        .map(|i| {
            let j = i + pad;
            if j < acc.len() && norm[j] > 1e-8 {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

const RESAMPLE_ZEROS: f64 = 16.0;

/// Band-limited interpolation reading the input at `step` samples per output
/// sample: `y[i] = x(i * step)`. The output has `round(len / step)` samples.
/// When `step > 1` the kernel cutoff is lowered to `1/step` to avoid aliasing.
pub fn resample(x: &[f64], step: f64) -> Vec<f64> {
    let out_len = ((x.len() as f64 / step).round() as usize).max(1);
    let cutoff = (1.0 / step).min(1.0);
    let half_width = RESAMPLE_ZEROS / cutoff;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let u = j as f64 - pos;
                let w = 0.5 + 0.5 * (PI * u / half_width).cos();
                acc += xj * cutoff * sinc(cutoff * u) * w;
            }
            acc
        })
        .collect()
}

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Phase-vocoder time stretch. `rate > 1` shortens, `rate < 1` lengthens;
/// the result has `round(len / rate)` samples and the original pitch.
pub fn time_stretch(x: &[f64], rate: f64) -> Vec<f64> {
    let out_len = ((x.len() as f64 / rate).round() as usize).max(1);
    let frames = stft(x, STFT_SIZE, STFT_HOP);
    let bins = STFT_SIZE / 2 + 1;
    let n = frames.len();
    let advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * k as f64 * STFT_HOP as f64 / STFT_SIZE as f64)
        .collect();
    let zero = vec![Complex64::new(0.0, 0.0); bins];
    let frame_at = |i: usize| if i < n { &frames[i] } else { &zero };

    let mut phase: Vec<f64> = frames[0].iter().map(|c| c.arg()).collect();
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while (t as usize) < n {
        let i = t as usize;
        let a = t - i as f64;
        let (f0, f1) = (frame_at(i), frame_at(i + 1));
        let frame: Vec<Complex64> = (0..bins)
            .map(|k| {
                let mag = (1.0 - a) * f0[k].norm() + a * f1[k].norm();
                Complex64::from_polar(mag, phase[k])
            })
            .collect();
        out.push(frame);
        for k in 0..bins {
            let dphi = wrap_phase(f1[k].arg() - f0[k].arg() - advance[k]);
            phase[k] += advance[k] + dphi;
        }
        t += rate;
    }
    istft(&out, STFT_SIZE, STFT_HOP, out_len)
}

/// Keeps only spectral content with frequency in `[low_hz, high_hz)` using a
/// single full-length FFT mask, so the result is exactly band-confined.
pub fn band_filter(x: &[f64], sample_rate_hz: f64, low_hz: f64, high_hz: f64) -> Vec<f64> {
    let n = x.len();
    let fft = FftPair::new(n);
    let mut spec = fft.forward_real(x);
    for (k, c) in spec.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * sample_rate_hz / n as f64;
        if !(f >= low_hz && f < high_hz) {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    fft.inverse_real(spec)
}

/// Energy (sum of squares) of the component of `x` in `[low_hz, high_hz)`.
pub fn band_energy(x: &[f64], sample_rate_hz: f64, low_hz: f64, high_hz: f64) -> f64 {
    let n = x.len();
    let spec = FftPair::new(n).forward_real(x);
    spec.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = (*k).min(n - k) as f64 * sample_rate_hz / n as f64;
            f >= low_hz && f < high_hz
        })
        .map(|(_, c)| c.norm_sqr())
        .sum::<f64>()
        / n as f64
}

/// Frequency of the strongest spectral peak, refined by parabolic
/// interpolation of the log magnitude around the peak bin.
pub fn dominant_frequency(x: &[f64], sample_rate_hz: f64) -> f64 {
    let n = x.len().next_power_of_two().max(4096) * 2;
    let win = hann(x.len());
    let windowed: Vec<f64> = x.iter().zip(&win).map(|(a, w)| a * w).collect();
    let spec = FftPair::new(n).forward_real(&windowed);
    let mags: Vec<f64> = spec[..n / 2].iter().map(|c| c.norm() + 1e-300).collect();
    let k = (1..n / 2 - 1)
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
        .unwrap_or(1);
    let (l, c, r) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
    let denom = l - 2.0 * c + r;
    let delta = if denom.abs() > 1e-15 { 0.5 * (l - r) / denom } else { 0.0 };
    (k as f64 + delta) * sample_rate_hz / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / 16000.0).sin()).collect()
    }

    #[test]
    fn stft_round_trip() {
        let x = sine(523.0, 5000);
        let y = istft(&stft(&x, 1024, 256), 1024, 256, x.len());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn resample_identity_and_rate() {
        let x = sine(300.0, 4000);
        let y = resample(&x, 1.0);
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
        let z = resample(&x, 1.2);
        assert_eq!(z.len(), (4000.0f64 / 1.2).round() as usize);
        let f = dominant_frequency(&z[200..z.len() - 200], 16000.0);
        assert!((f - 360.0).abs() < 1.0, "{f}");
    }

    #[test]
    fn time_stretch_keeps_pitch() {
        let x = sine(440.0, 16000);
        let y = time_stretch(&x, 0.8);
        assert_eq!(y.len(), 20000);
        let f = dominant_frequency(&y[2000..18000], 16000.0);
        assert!((f - 440.0).abs() < 2.0, "{f}");
    }

    #[test]
    fn band_filter_confines_energy() {
        let x: Vec<f64> = sine(300.0, 8000).iter().zip(sine(2000.0, 8000)).map(|(a, b)| a + b).collect();
        let y = band_filter(&x, 16000.0, 1000.0, 3000.0);
        assert!(band_energy(&y, 16000.0, 0.0, 1000.0) < 1e-20);
        let e_in = band_energy(&x, 16000.0, 1000.0, 3000.0);
        let e_out = band_energy(&y, 16000.0, 1000.0, 3000.0);
        assert!((e_in - e_out).abs() / e_in < 1e-9);
    }

    #[test]
    fn dominant_frequency_is_accurate() {
        let f = dominant_frequency(&sine(437.3, 16000), 16000.0);
        assert!((f - 437.3).abs() < 0.1, "{f}");
    }
}
