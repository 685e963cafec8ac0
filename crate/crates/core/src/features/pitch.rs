//! Normalised-autocorrelation F0 tracker, one estimate per mel frame.

use super::mel::{frame_count, reflect_pad, HOP, N_FFT, SAMPLE_RATE};

/// Voiced/unvoiced periodicity threshold.
pub const DEFAULT_VOICING_THRESHOLD: f64 = 0.3;
pub const F0_MIN: f64 = 60.0;
pub const F0_MAX: f64 = 500.0;
const SILENCE_RMS: f64 = 1e-4;

/// Per-frame F0 in Hz with voiced flags; unvoiced frames carry 0 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    pub hz: Vec<f32>,
    pub voiced: Vec<bool>,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// F0 values of voiced frames, in order.
    pub fn voiced_values(&self) -> Vec<f64> {
        self.hz.iter().zip(&self.voiced).filter(|(_, &v)| v).map(|(&h, _)| h as f64).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PitchConfig {
    pub threshold: f64,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig { threshold: DEFAULT_VOICING_THRESHOLD, f0_min: F0_MIN, f0_max: F0_MAX }
    }
}

pub fn estimate_f0(audio: &[f32]) -> F0Track {
    estimate_f0_with(audio, PitchConfig::default())
}

pub fn estimate_f0_with(audio: &[f32], cfg: PitchConfig) -> F0Track {
    let frames = frame_count(audio.len());
    if audio.len() <= N_FFT / 2 {
        return F0Track { hz: vec![0.0; frames], voiced: vec![false; frames] };
    }
    let padded = reflect_pad(audio, N_FFT / 2);
    let sr = SAMPLE_RATE as f64;
    let lag_min = (sr / cfg.f0_max).floor() as usize;
    let lag_max = (sr / cfg.f0_min).ceil() as usize;
    let mut hz = Vec::with_capacity(frames);
    let mut voiced = Vec::with_capacity(frames);
    let mut r = vec![0.0; lag_max + 2];
    for t in 0..frames {
        let frame = &padded[t * HOP..t * HOP + N_FFT];
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / N_FFT as f64).sqrt();
        if rms < SILENCE_RMS {
            hz.push(0.0);
            voiced.push(false);
            continue;
        }
        let mean = frame.iter().sum::<f64>() / N_FFT as f64;
        let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
        for (lag, slot) in r.iter_mut().enumerate().take(lag_max + 2).skip(lag_min.saturating_sub(1)) {
            *slot = normalized_corr(&x, lag);
        }
        let best = (lag_min..=lag_max).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.threshold {
            hz.push(0.0);
            voiced.push(false);
            continue;
        }
        // first local peak close to the global one avoids sub-octave picks
        let mut lag = lag_min;
        for l in lag_min..=lag_max {
            let is_peak = r[l] >= r[l.saturating_sub(1)] && r[l] >= r[l + 1];
            if is_peak && r[l] >= 0.9 * best {
                lag = l;
                break;
            }
        }
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
        let period = lag as f64 + shift.clamp(-0.5, 0.5);
        hz.push((sr / period) as f32);
        voiced.push(true);
    }
    F0Track { hz, voiced }
}

fn normalized_corr(x: &[f64], lag: usize) -> f64 {
    if lag >= x.len() {
        return 0.0;
    }
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i], x[i + lag]);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let d = (xx * yy).sqrt();
    if d <= 0.0 {
        0.0
    } else {
        xy / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn sine(freq: f64, secs: f64) -> Vec<f32> {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn sine_220_is_tracked() {
        let track = estimate_f0(&sine(220.0, 1.0));
        assert_eq!(track.len(), 87);
        assert!(track.voiced_count() > 80);
        for (h, v) in track.hz.iter().zip(&track.voiced) {
            if *v {
                assert!((h - 220.0).abs() <= 5.0, "{h}");
            }
        }
    }

    #[test]
    fn white_noise_mostly_unvoiced() {
        let mut rng = SeededRng::new(5);
        let noise: Vec<f32> = (0..22_050).map(|_| (rng.uniform() * 2.0 - 1.0) as f32 * 0.3).collect();
        let track = estimate_f0(&noise);
        assert!((track.voiced_count() as f64) < 0.2 * track.len() as f64);
    }

    #[test]
    fn silence_all_unvoiced() {
        let track = estimate_f0(&vec![0.0; 8000]);
        assert_eq!(track.voiced_count(), 0);
        assert_eq!(track.len(), frame_count(8000));
    }
}
