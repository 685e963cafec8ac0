//! Mel-to-audio rendering by iterative phase reconstruction. For listening only.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::mel::{hann, mel_filterbank, MelSpectrogram, HOP, N_FFT, N_MELS};

/// Approximate linear magnitudes from a log mel: each bin takes the
/// filter-weighted average of area-normalised band magnitudes.
pub fn mel_to_magnitudes(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    let fb = mel_filterbank();
    let bins = N_FFT / 2 + 1;
    let area: Vec<f64> = fb.iter().map(|f| f.iter().sum::<f64>().max(1e-12)).collect();
    let mut weight = vec![0.0; bins];
    for f in &fb {
        for (k, w) in f.iter().enumerate() {
            weight[k] += w;
        }
    }
    (0..mel.frames())
        .map(|t| {
            let frame = mel.frame(t);
            (0..bins)
                .map(|k| {
                    if weight[k] <= 0.0 {
                        return 0.0;
                    }
                    let s: f64 = (0..N_MELS).map(|b| fb[b][k] * (frame[b] as f64).exp() / area[b]).sum();
                    s / weight[k]
                })
                .collect()
        })
        .collect()
}

/// Griffin-Lim reconstruction of `frames · HOP` samples.
pub fn griffin_lim(mel: &MelSpectrogram, iterations: usize) -> Vec<f32> {
    let mags = mel_to_magnitudes(mel);
    let frames = mags.len();
    let bins = N_FFT / 2 + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(N_FFT);
    let inv = planner.plan_fft_inverse(N_FFT);
    let win = hann(N_FFT);
    let pad = N_FFT / 2;
    let len = frames * HOP + 2 * pad;
    let mut norm = vec![0.0; len];
    for t in 0..frames {
        for i in 0..N_FFT {
            if t * HOP + i < len {
                norm[t * HOP + i] += win[i] * win[i];
            }
        }
    }
    let mut phase: Vec<Vec<Complex<f64>>> = vec![vec![Complex::new(1.0, 0.0); bins]; frames];
    let mut signal = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for it in 0..=iterations {
        signal.iter_mut().for_each(|s| *s = 0.0);
        for t in 0..frames {
            for k in 0..bins {
                buf[k] = phase[t][k] * mags[t][k];
            }
            for k in bins..N_FFT {
                buf[k] = buf[N_FFT - k].conj();
            }
            inv.process(&mut buf);
            for i in 0..N_FFT {
                if t * HOP + i < len {
                    signal[t * HOP + i] += buf[i].re / N_FFT as f64 * win[i];
                }
            }
        }
        for (s, n) in signal.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *s /= n;
            }
        }
        if it == iterations {
            break;
        }
        for t in 0..frames {
            for i in 0..N_FFT {
                let j = t * HOP + i;
                buf[i] = Complex::new(if j < len { signal[j] * win[i] } else { 0.0 }, 0.0);
            }
            fwd.process(&mut buf);
            for k in 0..bins {
                let n = buf[k].norm();
                phase[t][k] = if n > 1e-12 { buf[k] / n } else { Complex::new(1.0, 0.0) };
            }
        }
    }
    signal[pad..pad + frames * HOP].iter().map(|&s| s.clamp(-1.0, 1.0) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::mel::extract_mel;

    #[test]
    fn reconstruction_keeps_the_spectral_envelope() {
        let sr = 22_050.0;
        let audio: Vec<f32> = (0..8192).map(|i| (0.3 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr).sin()) as f32).collect();
        let mel = extract_mel(&audio).unwrap();
        let y = griffin_lim(&mel, 16);
        assert_eq!(y.len(), mel.frames() * HOP);
        let back = extract_mel(&y).unwrap();
        let peak = |m: &MelSpectrogram| {
            let f = m.frame(m.frames() / 2);
            (0..N_MELS).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap()
        };
        assert!((peak(&mel) as i64 - peak(&back) as i64).abs() <= 1);
    }
}
