//! Phoneme-level prosody units: averaging, speaker normalisation and quantisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DURATION_CODEBOOK: usize = 32;
pub const PITCH_CODEBOOK: usize = 64;
pub const ENERGY_CODEBOOK: usize = 64;
pub const PITCH_RANGE: (f64, f64) = (-4.0, 4.0);
pub const ENERGY_RANGE: (f64, f64) = (-5.0, 5.0);

/// One of the three unit streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Duration,
    Pitch,
    Energy,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Duration, Stream::Pitch, Stream::Energy];

    pub fn codebook(self) -> usize {
        match self {
            Stream::Duration => DURATION_CODEBOOK,
            Stream::Pitch => PITCH_CODEBOOK,
            Stream::Energy => ENERGY_CODEBOOK,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Duration => "duration",
            Stream::Pitch => "pitch",
            Stream::Energy => "energy",
        }
    }
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duration" | "d" => Ok(Stream::Duration),
            "pitch" | "p" => Ok(Stream::Pitch),
            "energy" | "e" => Ok(Stream::Energy),
            other => Err(Error::Usage(format!("unknown unit stream `{other}`"))),
        }
    }
}

/// Per-phoneme duration/pitch/energy unit indices. All streams share one length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcousticUnitSequence {
    duration: Vec<usize>,
    pitch: Vec<usize>,
    energy: Vec<usize>,
}

impl AcousticUnitSequence {
    pub fn new(duration: Vec<usize>, pitch: Vec<usize>, energy: Vec<usize>) -> Result<Self> {
        if duration.len() != pitch.len() || pitch.len() != energy.len() {
            return Err(Error::Data(format!(
                "unit streams differ in length: {} / {} / {}",
                duration.len(),
                pitch.len(),
                energy.len()
            )));
        }
        let seq = AcousticUnitSequence { duration, pitch, energy };
        for s in Stream::ALL {
            if let Some(&bad) = seq.stream(s).iter().find(|&&u| u >= s.codebook()) {
                return Err(Error::Data(format!("{} unit {} outside [0, {})", s.name(), bad, s.codebook())));
            }
        }
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.duration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duration.is_empty()
    }

    pub fn stream(&self, s: Stream) -> &[usize] {
        match s {
            Stream::Duration => &self.duration,
            Stream::Pitch => &self.pitch,
            Stream::Energy => &self.energy,
        }
    }

    pub fn duration(&self) -> &[usize] {
        &self.duration
    }

    pub fn pitch(&self) -> &[usize] {
        &self.pitch
    }

    pub fn energy(&self) -> &[usize] {
        &self.energy
    }

    /// Frame counts implied by the duration units.
    pub fn frames(&self) -> Vec<usize> {
        self.duration.iter().map(|&d| dequantize_duration(d)).collect()
    }

    pub fn step(&self, t: usize) -> [usize; 3] {
        [self.duration[t], self.pitch[t], self.energy[t]]
    }

    pub fn push(&mut self, step: [usize; 3]) {
        self.duration.push(step[0]);
        self.pitch.push(step[1]);
        self.energy.push(step[2]);
    }

    pub fn empty() -> Self {
        AcousticUnitSequence { duration: vec![], pitch: vec![], energy: vec![] }
    }

    /// Shifts one stream by `offset`, clamping to its codebook.
    pub fn manipulate(&self, stream: Stream, offset: i64) -> Self {
        let hi = stream.codebook() as i64 - 1;
        let shifted: Vec<usize> =
            self.stream(stream).iter().map(|&u| (u as i64 + offset).clamp(0, hi) as usize).collect();
        let mut out = self.clone();
        match stream {
            Stream::Duration => out.duration = shifted,
            Stream::Pitch => out.pitch = shifted,
            Stream::Energy => out.energy = shifted,
        }
        out
    }
}

/// Speaker-level statistics used to normalise F0 and energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStats {
    pub speaker_id: String,
    pub f0_mean: f64,
    pub f0_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

impl SpeakerStats {
    /// Stats from voiced-frame F0 values and all-frame energies.
    pub fn from_frames(speaker_id: &str, voiced_f0: &[f64], energy: &[f64]) -> Result<Self> {
        let (f0_mean, f0_std) = mean_std(voiced_f0);
        let (energy_mean, energy_std) = mean_std(energy);
        let s = SpeakerStats { speaker_id: speaker_id.to_string(), f0_mean, f0_std, energy_mean, energy_std };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.f0_std > 0.0 && self.energy_std > 0.0 && self.f0_std.is_finite() && self.energy_std.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("degenerate statistics for speaker {}", self.speaker_id)))
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn normalize(value: f64, mean: f64, std: f64) -> Result<f64> {
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::Data(format!("normalisation std must be positive, got {std}")));
    }
    Ok((value - mean) / std)
}

pub fn denormalize(z: f64, mean: f64, std: f64) -> f64 {
    z * std + mean
}

/// Round half away from zero.
pub fn round_half_away(v: f64) -> f64 {
    // f64::round already rounds ties away from zero; named for the contract
    v.round()
}

/// Maps a normalised value to one of `k` bins spanning `[lo, hi]`.
pub fn quantize(v: f64, k: usize, lo: f64, hi: f64) -> Result<usize> {
    if !v.is_finite() {
        return Err(Error::Data(format!("cannot quantise non-finite value {v}")));
    }
    if k < 2 || lo >= hi {
        return Err(Error::Data(format!("bad quantiser: k={k}, range [{lo}, {hi}]")));
    }
    let x = (v.clamp(lo, hi) - lo) / (hi - lo) * (k - 1) as f64;
    Ok((round_half_away(x) as i64).clamp(0, k as i64 - 1) as usize)
}

pub fn dequantize(i: usize, k: usize, lo: f64, hi: f64) -> f64 {
    lo + i as f64 * (hi - lo) / (k - 1) as f64
}

pub fn quantize_pitch(z: f64) -> Result<usize> {
    quantize(z, PITCH_CODEBOOK, PITCH_RANGE.0, PITCH_RANGE.1)
}

pub fn dequantize_pitch(i: usize) -> f64 {
    dequantize(i, PITCH_CODEBOOK, PITCH_RANGE.0, PITCH_RANGE.1)
}

pub fn quantize_energy(z: f64) -> Result<usize> {
    quantize(z, ENERGY_CODEBOOK, ENERGY_RANGE.0, ENERGY_RANGE.1)
}

pub fn dequantize_energy(i: usize) -> f64 {
    dequantize(i, ENERGY_CODEBOOK, ENERGY_RANGE.0, ENERGY_RANGE.1)
}

/// Frame count → duration unit; zero-frame phonemes count as one frame.
pub fn quantize_duration(frames: i64) -> Result<usize> {
    if frames < 0 {
        return Err(Error::Data(format!("negative duration {frames}")));
    }
    Ok(frames.clamp(1, DURATION_CODEBOOK as i64) as usize - 1)
}

pub fn dequantize_duration(unit: usize) -> usize {
    unit + 1
}

/// Checks that `durations` tile `[0, total)` and returns the span starts.
fn span_starts(durations: &[usize], total: usize) -> Result<Vec<usize>> {
    let sum: usize = durations.iter().sum();
    if sum != total {
        return Err(Error::Data(format!("phoneme spans cover {sum} frames, sequence has {total}")));
    }
    let mut starts = Vec::with_capacity(durations.len());
    let mut acc = 0;
    for &d in durations {
        starts.push(acc);
        acc += d;
    }
    Ok(starts)
}

/// Mean of `values` over each phoneme span.
pub fn phoneme_average(values: &[f64], durations: &[usize]) -> Result<Vec<f64>> {
    let starts = span_starts(durations, values.len())?;
    Ok(starts
        .iter()
        .zip(durations)
        .map(|(&s, &d)| if d == 0 { f64::NAN } else { values[s..s + d].iter().sum::<f64>() / d as f64 })
        .collect())
}

/// Voiced-only F0 mean per span; `None` for fully unvoiced spans.
pub fn phoneme_average_f0(f0: &[f64], voiced: &[bool], durations: &[usize]) -> Result<Vec<Option<f64>>> {
    if f0.len() != voiced.len() {
        return Err(Error::Data("f0 and voiced flags differ in length".into()));
    }
    let starts = span_starts(durations, f0.len())?;
    Ok(starts
        .iter()
        .zip(durations)
        .map(|(&s, &d)| {
            let vals: Vec<f64> = (s..s + d).filter(|&i| voiced[i]).map(|i| f0[i]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect())
}

/// Full unit extraction for one utterance.
pub fn utterance_units(
    durations: &[usize],
    f0: &[f64],
    voiced: &[bool],
    energy: &[f64],
    stats: &SpeakerStats,
) -> Result<AcousticUnitSequence> {
    stats.validate()?;
    let f0_ph = phoneme_average_f0(f0, voiced, durations)?;
    let en_ph = phoneme_average(energy, durations)?;
    let mut dur = Vec::with_capacity(durations.len());
    let mut pitch = Vec::with_capacity(durations.len());
    let mut en = Vec::with_capacity(durations.len());
    for i in 0..durations.len() {
        dur.push(quantize_duration(durations[i] as i64)?);
        // fully unvoiced span: speaker mean, i.e. normalised 0
        let z = match f0_ph[i] {
            Some(hz) => normalize(hz, stats.f0_mean, stats.f0_std)?,
            None => 0.0,
        };
        pitch.push(quantize_pitch(z)?);
        let ze = if en_ph[i].is_finite() { normalize(en_ph[i], stats.energy_mean, stats.energy_std)? } else { 0.0 };
        en.push(quantize_energy(ze)?);
    }
    AcousticUnitSequence::new(dur, pitch, en)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pitch_boundaries() {
        assert_eq!(quantize_pitch(-4.0).unwrap(), 0);
        assert_eq!(quantize_pitch(4.0).unwrap(), 63);
        assert_eq!(quantize_pitch(5.3).unwrap(), 63);
        // 31.5 rounds away from zero
        assert_eq!(quantize_pitch(0.0).unwrap(), 32);
    }

    #[test]
    fn duration_mapping() {
        assert_eq!(quantize_duration(1).unwrap(), 0);
        assert_eq!(quantize_duration(5).unwrap(), 4);
        assert_eq!(quantize_duration(40).unwrap(), 31);
        assert_eq!(quantize_duration(0).unwrap(), 0);
        assert!(quantize_duration(-1).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(quantize_pitch(f64::NAN).is_err());
        assert!(quantize_energy(f64::INFINITY).is_err());
    }

    #[test]
    fn normalisation() {
        assert_eq!(normalize(120.0, 120.0, 10.0).unwrap(), 0.0);
        assert_eq!(normalize(130.0, 120.0, 10.0).unwrap(), 1.0);
        assert!(normalize(1.0, 0.0, 0.0).is_err());
        let v = 143.37;
        assert!((denormalize(normalize(v, 120.0, 17.0).unwrap(), 120.0, 17.0) - v).abs() < 1e-6);
    }

    #[test]
    fn averaging() {
        assert_eq!(phoneme_average(&[1.0, 3.0, 5.0], &[2, 1]).unwrap(), vec![2.0, 5.0]);
        assert_eq!(phoneme_average(&[4.0; 6], &[1, 2, 3]).unwrap(), vec![4.0; 3]);
        assert!(phoneme_average(&[1.0, 2.0], &[1]).is_err());
        assert!(phoneme_average(&[1.0, 2.0], &[2, 1]).is_err());
    }

    #[test]
    fn unvoiced_span_maps_to_mid_unit() {
        let stats = SpeakerStats {
            speaker_id: "s".into(),
            f0_mean: 150.0,
            f0_std: 20.0,
            energy_mean: 1.0,
            energy_std: 0.5,
        };
        let units = utterance_units(
            &[2, 2],
            &[0.0, 0.0, 170.0, 170.0],
            &[false, false, true, true],
            &[1.0; 4],
            &stats,
        )
        .unwrap();
        assert_eq!(units.pitch()[0], 32);
        assert_eq!(units.pitch()[1], quantize_pitch(1.0).unwrap());
    }

    #[test]
    fn manipulation_clamps_and_isolates() {
        let u = AcousticUnitSequence::new(vec![3, 4], vec![63, 10], vec![5, 6]).unwrap();
        assert_eq!(u.manipulate(Stream::Pitch, 0), u);
        let m = u.manipulate(Stream::Pitch, 2);
        assert_eq!(m.pitch(), &[63, 12]);
        assert_eq!(m.duration(), u.duration());
        assert_eq!(m.energy(), u.energy());
    }

    proptest! {
        #[test]
        fn quantiser_round_trip_within_half_bin(v in -20.0f64..20.0) {
            let (lo, hi, k) = (-4.0, 4.0, 64);
            let i = quantize(v, k, lo, hi).unwrap();
            let half = (hi - lo) / (2.0 * (k - 1) as f64);
            prop_assert!((dequantize(i, k, lo, hi) - v.clamp(lo, hi)).abs() <= half + 1e-12);
        }

        #[test]
        fn quantiser_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_energy(x).unwrap() <= quantize_energy(y).unwrap());
        }
    }
}
