//! Oracles that read toy-corpus structure back out of a mel-spectrogram:
//! a nearest-template phoneme classifier and a harmonic-ripple F0 estimator.

use crate::features::mel::mel_band_centers;
use crate::features::{MelSpectrogram, N_MELS};

use super::toy::{phoneme_template, ToySpec, RIPPLE_CUTOFF_HZ};

/// Bands used for template matching; the ripple has faded out above them.
pub const CLASSIFY_BANDS: std::ops::Range<usize> = 30..N_MELS;

fn detrend(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = v.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        sxy += (i as f64 - xm) * (y - ym);
        sxx += (i as f64 - xm).powi(2);
    }
    let slope = sxy / sxx;
    v.iter().enumerate().map(|(i, &y)| y - ym - slope * (i as f64 - xm)).collect()
}

/// Nearest-template phoneme classifier for one toy corpus.
pub struct TemplateClassifier {
    languages: Vec<(String, Vec<(String, Vec<f64>)>)>,
}

impl TemplateClassifier {
    pub fn new(spec: &ToySpec) -> Self {
        let languages = spec
            .languages()
            .into_iter()
            .enumerate()
            .map(|(li, l)| {
                let t = l
                    .alphabet
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let full = phoneme_template(spec.seed, s, spec.is_voiced(li, i));
                        (s.clone(), detrend(&full[CLASSIFY_BANDS]))
                    })
                    .collect();
                (l.id, t)
            })
            .collect();
        TemplateClassifier { languages }
    }

    /// Symbol whose template is closest to `frame` after removing level and slope.
    pub fn classify(&self, language: &str, frame: &[f64]) -> Option<&str> {
        let (_, temps) = self.languages.iter().find(|(id, _)| id == language)?;
        let x = detrend(&frame[CLASSIFY_BANDS]);
        temps
            .iter()
            .map(|(s, t)| (s, x.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s.as_str())
    }

    /// Classifies each phoneme span from its mean frame.
    pub fn classify_spans(&self, language: &str, mel: &MelSpectrogram, durations: &[usize]) -> Vec<String> {
        let mut out = Vec::with_capacity(durations.len());
        let mut t = 0;
        for &d in durations {
            let end = (t + d).min(mel.frames());
            let mut mean = vec![0.0; N_MELS];
            for f in t..end {
                for (m, &v) in mean.iter_mut().zip(mel.frame(f)) {
                    *m += v as f64;
                }
            }
            let n = (end - t).max(1) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            out.push(self.classify(language, &mean).unwrap_or("").to_string());
            t = end;
        }
        out
    }

    /// Fraction of spans classified as their reference symbol.
    pub fn accuracy(&self, language: &str, mel: &MelSpectrogram, durations: &[usize], reference: &[String]) -> f64 {
        let pred = self.classify_spans(language, mel, durations);
        let hits = pred.iter().zip(reference).filter(|(a, b)| a == b).count();
        hits as f64 / reference.len().max(1) as f64
    }
}

/// F0 estimate of one frame from the harmonic ripple in the low bands.
///
/// Scans candidates in 1 Hz steps and keeps the one whose ripple pattern
/// correlates best with the detrended low-band spectrum.
pub struct RippleF0 {
    centers: Vec<f64>,
    bands: usize,
}

impl Default for RippleF0 {
    fn default() -> Self {
        let centers = mel_band_centers();
        let bands = centers.iter().filter(|&&c| c < RIPPLE_CUTOFF_HZ).count();
        RippleF0 { centers, bands }
    }
}

impl RippleF0 {
    pub const F_MIN: f64 = 70.0;
    pub const F_MAX: f64 = 400.0;

    pub fn frame(&self, frame: &[f32]) -> f64 {
        let x: Vec<f64> = frame[..self.bands].iter().map(|&v| v as f64).collect();
        let x = detrend(&x);
        let mut best = (f64::NEG_INFINITY, Self::F_MIN);
        let mut f = Self::F_MIN;
        while f <= Self::F_MAX {
            let c: Vec<f64> = self.centers[..self.bands]
                .iter()
                .map(|&fc| (1.0 - fc / RIPPLE_CUTOFF_HZ).max(0.0) * (2.0 * std::f64::consts::PI * fc / f).cos())
                .collect();
            let c = detrend(&c);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let score = x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / norm;
            if score > best.0 {
                best = (score, f);
            }
            f += 1.0;
        }
        best.1
    }

    pub fn contour(&self, mel: &MelSpectrogram) -> Vec<f64> {
        (0..mel.frames()).map(|t| self.frame(mel.frame(t))).collect()
    }
}
