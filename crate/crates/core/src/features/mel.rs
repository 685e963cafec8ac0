use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const N_FFT: usize = 1024;
pub const WIN_LENGTH: usize = 1024;
pub const HOP: usize = 256;
pub const N_MELS: usize = 80;
pub const MEL_FMIN: f64 = 0.0;
pub const MEL_FMAX: f64 = 8000.0;
/// Magnitudes are clamped here before the log.
pub const MAG_FLOOR: f32 = 1e-5;

/// `ln(MAG_FLOOR)`: the value of a silent mel cell.
pub fn log_floor() -> f32 {
    MAG_FLOOR.ln()
}

/// Frame-major log-magnitude mel matrix, `frames × 80`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: usize,
    data: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(frames: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * N_MELS {
            return Err(Error::Data(format!(
                "mel needs {} x {} values, got {}",
                frames,
                N_MELS,
                data.len()
            )));
        }
        Ok(MelSpectrogram { frames, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> MelSpectrogram {
        MelSpectrogram { frames: end - start, data: self.data[start * N_MELS..end * N_MELS].to_vec() }
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Number of frames for `n` samples under the centred framing convention.
pub fn frame_count(n: usize) -> usize {
    n.div_ceil(HOP)
}

pub fn hz_to_mel(f: f64) -> f64 {
    // Slaney: linear below 1 kHz, logarithmic above
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = (6.4f64).ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Centre frequencies (Hz) of the 80 mel bands.
pub fn mel_band_centers() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(MEL_FMIN), hz_to_mel(MEL_FMAX));
    (1..=N_MELS).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64)).collect()
}

/// Slaney-normalised triangular filterbank, `80 × (N_FFT/2 + 1)`.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let n_bins = N_FFT / 2 + 1;
    let (lo, hi) = (hz_to_mel(MEL_FMIN), hz_to_mel(MEL_FMAX));
    let pts: Vec<f64> =
        (0..N_MELS + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64)).collect();
    let bin_hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
    (0..N_MELS)
        .map(|m| {
            let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
            let norm = 2.0 / (r - l);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    // periodic Hann, as used by STFT front ends
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Reflect-pads `audio` by `pad` on both sides (no edge repetition).
pub(crate) fn reflect_pad(audio: &[f32], pad: usize) -> Vec<f64> {
    let n = audio.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            let mut j = i;
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
            audio[j.clamp(0, n - 1) as usize] as f64
        })
        .collect()
}

/// Short-time magnitude spectra, `frames × (N_FFT/2 + 1)`.
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Stft { fft, window: hann(WIN_LENGTH) }
    }

    pub fn magnitudes(&self, audio: &[f32]) -> Result<Vec<Vec<f64>>> {
        if audio.len() < WIN_LENGTH {
            return Err(Error::Data(format!(
                "audio has {} samples, need at least one window ({})",
                audio.len(),
                WIN_LENGTH
            )));
        }
        let padded = reflect_pad(audio, N_FFT / 2);
        let frames = frame_count(audio.len());
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = t * HOP;
            for i in 0..N_FFT {
                buf[i] = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..N_FFT / 2 + 1].iter().map(|c| c.norm()).collect());
        }
        Ok(out)
    }
}

/// Log mel spectrogram of 22.05 kHz audio.
pub fn extract_mel(audio: &[f32]) -> Result<MelSpectrogram> {
    let mags = Stft::new().magnitudes(audio)?;
    Ok(mel_from_magnitudes(&mags))
}

pub fn mel_from_magnitudes(mags: &[Vec<f64>]) -> MelSpectrogram {
    let fb = mel_filterbank();
    let mut data = Vec::with_capacity(mags.len() * N_MELS);
    for frame in mags {
        for filt in &fb {
            let v: f64 = filt.iter().zip(frame).map(|(w, m)| w * m).sum();
            data.push((v as f32).max(MAG_FLOOR).ln());
        }
    }
    MelSpectrogram { frames: mags.len(), data }
}

/// Per-frame energy: L2 norm of the linear magnitude spectrum.
pub fn frame_energy(audio: &[f32]) -> Result<Vec<f32>> {
    let mags = Stft::new().magnitudes(audio)?;
    Ok(mags.iter().map(|f| f.iter().map(|m| m * m).sum::<f64>().sqrt() as f32).collect())
}
