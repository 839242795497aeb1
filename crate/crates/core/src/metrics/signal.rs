//! Signal-level baselines: SNR and log-spectral distance.

use crate::audio::AudioClip;
use crate::dsp::{hann, FftPair, STFT_HOP, STFT_SIZE};
use crate::error::{Error, Result};

/// Value reported when the residual is exactly zero.
pub const SNR_CAP_DB: f64 = 200.0;
pub const LSD_FLOOR: f64 = 1e-10;

/// Both signals trimmed to the shorter length.
fn aligned<'a>(a: &'a AudioClip, b: &'a AudioClip) -> (&'a [f64], &'a [f64]) {
    let n = a.len().min(b.len());
    (&a.samples()[..n], &b.samples()[..n])
}

/// `10·log10(Σref² / Σ(pert−ref)²)` over the common prefix, capped at 200 dB.
pub fn snr_db(reference: &AudioClip, perturbed: &AudioClip) -> Result<f64> {
    let (r, p) = aligned(reference, perturbed);
    let signal: f64 = r.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::invalid("reference", "reference clip has zero power"));
    }
    let noise: f64 = r.iter().zip(p).map(|(a, b)| (b - a) * (b - a)).sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

fn log_spectra(x: &[f64], fft: &FftPair, win: &[f64]) -> Vec<Vec<f64>> {
    let frames = 1 + (x.len() - STFT_SIZE) / STFT_HOP;
    (0..frames)
        .map(|f| {
            let start = f * STFT_HOP;
            let frame: Vec<f64> = x[start..start + STFT_SIZE].iter().zip(win).map(|(a, w)| a * w).collect();
            fft.forward_real(&frame)[..=STFT_SIZE / 2]
                .iter()
                .map(|c| (c.norm() + LSD_FLOOR).log10())
                .collect()
        })
        .collect()
}

/// Mean over frames of the mean over bins of the squared log10-magnitude
/// difference (1024-sample Hann frames, hop 256, no padding).
pub fn lsd(reference: &AudioClip, perturbed: &AudioClip) -> Result<f64> {
    let (r, p) = aligned(reference, perturbed);
    if r.len() < STFT_SIZE {
        return Err(Error::invalid(
            "clip",
            format!("{} samples is shorter than one {STFT_SIZE}-sample analysis window", r.len()),
        ));
    }
    let fft = FftPair::new(STFT_SIZE);
    let win = hann(STFT_SIZE);
    let a = log_spectra(r, &fft, &win);
    let b = log_spectra(p, &fft, &win);
    let per_frame: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / x.len() as f64)
        .collect();
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synth_tone;
    use crate::rng;
    use rand::Rng;

    fn noise(seed: u64, n: usize, amp: f64) -> AudioClip {
        let mut r = rng::stream(seed, 0);
        AudioClip::new((0..n).map(|_| r.gen_range(-amp..amp)).collect(), 16_000).unwrap()
    }

    #[test]
    fn snr_cases() {
        let s = synth_tone(440.0, 1.0, 1.0, 16_000).unwrap();
        assert_eq!(snr_db(&s, &s).unwrap(), SNR_CAP_DB);
        let inv = s.scaled(-1.0);
        assert!((snr_db(&s, &inv).unwrap() + 6.0206).abs() < 0.1);
        let n = synth_tone(1234.5, 1.0, 0.1, 16_000).unwrap();
        let sum: Vec<f64> = s.samples().iter().zip(n.samples()).map(|(a, b)| a + b).collect();
        let p = AudioClip::new(sum, 16_000).unwrap();
        assert!((snr_db(&s, &p).unwrap() - 20.0).abs() < 0.1);
        let silent = AudioClip::new(vec![0.0; 100], 16_000).unwrap();
        assert!(snr_db(&silent, &s).is_err());
    }

    #[test]
    fn snr_trims_to_shorter_clip() {
        let s = synth_tone(440.0, 1.0, 0.5, 16_000).unwrap();
        assert_eq!(snr_db(&s, &s.truncated(8000)).unwrap(), SNR_CAP_DB);
    }

    #[test]
    fn lsd_cases() {
        let a = noise(1, 16_000, 0.05);
        assert_eq!(lsd(&a, &a).unwrap(), 0.0);
        let loud = a.scaled(10.0);
        assert!((lsd(&a, &loud).unwrap() - 1.0).abs() < 1e-9);
        let b = noise(2, 16_000, 0.05);
        assert_eq!(lsd(&a, &b).unwrap(), lsd(&b, &a).unwrap());
        assert!(lsd(&a.truncated(1000), &a).is_err());
    }
}
