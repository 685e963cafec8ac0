//! Deterministic synthetic "toy speech".
//!
//! Each phoneme owns a spectral envelope template (Gaussian formant bumps
//! over the mel bands). A speaker adds a spectral tilt, a level offset and
//! a base F0. Voiced frames carry a harmonic ripple `cos(2π f_b / F0)` in
//! the low bands, so pitch is visible in the mel itself. Styles draw
//! durations, pitch and energy offsets from narrow (neutral) or wide bimodal
//! (expressive) families; the deterministic family replaces every draw by a
//! fixed function of phoneme, position and style.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::mel::{log_floor, mel_band_centers};
use crate::features::{wav, MelSpectrogram, HOP, N_MELS, SAMPLE_RATE};
use crate::numerics::SeededRng;

use super::{write_features, write_manifest, Corpus, Language, SpeakerInfo, Split, Style, Utterance, MANIFEST};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProsodyFamily {
    Natural,
    /// Prosody is a fixed function of phoneme, position and style.
    Deterministic,
}

/// Offsets are drawn as `mode + std · N(0, 1)` with a uniformly chosen mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleParams {
    /// Frames added to the phoneme's base duration.
    pub duration_modes: Vec<f64>,
    pub duration_std: f64,
    /// Semitones relative to the speaker's base F0.
    pub pitch_modes: Vec<f64>,
    pub pitch_std: f64,
    /// Log-level offsets.
    pub energy_modes: Vec<f64>,
    pub energy_std: f64,
}

impl StyleParams {
    pub fn neutral() -> Self {
        StyleParams {
            duration_modes: vec![0.0],
            duration_std: 0.5,
            pitch_modes: vec![0.0],
            pitch_std: 1.0,
            energy_modes: vec![0.0],
            energy_std: 0.2,
        }
    }

    pub fn expressive() -> Self {
        StyleParams {
            duration_modes: vec![-1.5, 3.0],
            duration_std: 0.7,
            pitch_modes: vec![-4.0, 4.0],
            pitch_std: 1.0,
            energy_modes: vec![-0.8, 0.8],
            energy_std: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub seed: u64,
    pub speakers_per_language: usize,
    pub utterances_per_speaker_style: usize,
    /// Keep only the first N utterances in round-robin order; 0 keeps all.
    pub max_utterances: usize,
    /// One alphabet per language; languages are named `A`, `B`, ...
    pub alphabet_sizes: Vec<usize>,
    /// The last symbols of each alphabet are unvoiced.
    pub unvoiced_per_language: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub family: ProsodyFamily,
    pub neutral: StyleParams,
    pub expressive: StyleParams,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Std of the additive log-mel noise.
    pub noise_std: f64,
    pub render_audio: bool,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            seed: 7,
            speakers_per_language: 4,
            utterances_per_speaker_style: 12,
            max_utterances: 0,
            alphabet_sizes: vec![12, 10],
            unvoiced_per_language: 2,
            min_phonemes: 6,
            max_phonemes: 12,
            family: ProsodyFamily::Natural,
            neutral: StyleParams::neutral(),
            expressive: StyleParams::expressive(),
            val_fraction: 0.1,
            test_fraction: 0.1,
            noise_std: 0.02,
            render_audio: false,
        }
    }
}

impl ToySpec {
    /// Ten training utterances with deterministic prosody.
    pub fn overfit(seed: u64) -> Self {
        ToySpec {
            seed,
            speakers_per_language: 1,
            utterances_per_speaker_style: 3,
            max_utterances: 10,
            family: ProsodyFamily::Deterministic,
            val_fraction: 0.0,
            test_fraction: 0.0,
            ..ToySpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("toy spec: {m}")));
        if self.alphabet_sizes.is_empty() || self.alphabet_sizes.len() > 26 {
            return bad("between 1 and 26 languages");
        }
        if self.alphabet_sizes.iter().any(|&n| n <= self.unvoiced_per_language) {
            return bad("every alphabet needs a voiced phoneme");
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            return bad("phoneme count range is empty");
        }
        if self.speakers_per_language == 0 || self.utterances_per_speaker_style == 0 {
            return bad("speaker and utterance counts must be positive");
        }
        for s in [&self.neutral, &self.expressive] {
            if s.duration_modes.is_empty() || s.pitch_modes.is_empty() || s.energy_modes.is_empty() {
                return bad("style families need at least one mode per stream");
            }
        }
        if !(0.0..1.0).contains(&(self.val_fraction + self.test_fraction)) {
            return bad("split fractions must sum below 1");
        }
        Ok(())
    }

    pub fn languages(&self) -> Vec<Language> {
        self.alphabet_sizes
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                let id = ((b'A' + l as u8) as char).to_string();
                let lower = id.to_lowercase();
                Language { id, alphabet: (0..n).map(|i| format!("{lower}{i}")).collect() }
            })
            .collect()
    }

    pub fn is_voiced(&self, language: usize, index: usize) -> bool {
        index < self.alphabet_sizes[language] - self.unvoiced_per_language
    }

    fn style(&self, s: Style) -> &StyleParams {
        match s {
            Style::Neutral => &self.neutral,
            Style::Expressive => &self.expressive,
        }
    }
}

pub const BASE_LEVEL: f64 = -5.0;
pub const RIPPLE_AMPLITUDE: f64 = 0.8;
/// Ripple fades out linearly up to this frequency.
pub const RIPPLE_CUTOFF_HZ: f64 = 1200.0;
pub const UNVOICED_LEVEL: f64 = -1.0;
pub const MIN_DURATION: f64 = 2.0;
pub const MAX_DURATION: f64 = 16.0;

/// Envelope template of a phoneme, 80 log-mel values.
pub fn phoneme_template(seed: u64, symbol: &str, voiced: bool) -> Vec<f64> {
    let mut rng = SeededRng::derived(seed, &format!("template/{symbol}"));
    let mut bumps = Vec::new();
    if voiced {
        bumps.push((4.0 + 26.0 * rng.uniform(), 2.0 + 3.0 * rng.uniform(), 1.5 + 1.5 * rng.uniform()));
        for _ in 0..2 {
            bumps.push((32.0 + 44.0 * rng.uniform(), 2.0 + 3.0 * rng.uniform(), 1.5 + 1.5 * rng.uniform()));
        }
    } else {
        bumps.push((55.0 + 20.0 * rng.uniform(), 6.0 + 4.0 * rng.uniform(), 2.0 + 1.0 * rng.uniform()));
        bumps.push((35.0 + 20.0 * rng.uniform(), 2.0 + 3.0 * rng.uniform(), 1.0 + 1.0 * rng.uniform()));
    }
    (0..N_MELS)
        .map(|b| {
            let mut v: f64 =
                bumps.iter().map(|&(c, w, a)| a * (-(b as f64 - c).powi(2) / (2.0 * w * w)).exp()).sum();
            if !voiced && b < 30 {
                v -= 2.0;
            }
            v
        })
        .collect()
}

/// Harmonic ripple added to a voiced frame.
pub fn ripple(centers: &[f64], f0: f64) -> Vec<f64> {
    centers
        .iter()
        .map(|&fc| {
            let w = (1.0 - fc / RIPPLE_CUTOFF_HZ).max(0.0);
            RIPPLE_AMPLITUDE * w * (2.0 * std::f64::consts::PI * fc / f0).cos()
        })
        .collect()
}

pub fn base_duration(index: usize) -> f64 {
    3.0 + ((index * 3) % 5) as f64
}

fn speakers(spec: &ToySpec, langs: &[Language]) -> Vec<SpeakerInfo> {
    let n = langs.len() * spec.speakers_per_language;
    let mut out = Vec::with_capacity(n);
    for k in 0..spec.speakers_per_language {
        for l in langs {
            let g = out.len();
            let id = format!("{}{}", l.id, k);
            let mut rng = SeededRng::derived(spec.seed, &format!("speaker/{id}"));
            out.push(SpeakerInfo {
                f0_base: 110.0 + 140.0 * (g as f64 + 0.5) / n as f64 + 4.0 * (rng.uniform() - 0.5),
                tilt: 3.0 * (rng.uniform() - 0.5),
                gain: rng.uniform() - 0.5,
                language: l.id.clone(),
                id,
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

fn pick_mode(modes: &[f64], rng: &mut SeededRng) -> f64 {
    modes[rng.range_inclusive(0, modes.len() - 1)]
}

/// Per-phoneme `(frames, semitones, level offset)`.
fn prosody(spec: &ToySpec, style: &StyleParams, ids: &[usize], rng: &mut SeededRng) -> Vec<(usize, f64, f64)> {
    ids.iter()
        .enumerate()
        .map(|(i, &p)| {
            let (d, s, e) = match spec.family {
                ProsodyFamily::Natural => (
                    base_duration(p) + pick_mode(&style.duration_modes, rng) + style.duration_std * rng.normal(),
                    pick_mode(&style.pitch_modes, rng) + style.pitch_std * rng.normal(),
                    pick_mode(&style.energy_modes, rng) + style.energy_std * rng.normal(),
                ),
                ProsodyFamily::Deterministic => {
                    let m = |v: &[f64], k: usize| v[k % v.len()];
                    (
                        base_duration(p) + m(&style.duration_modes, i + p),
                        m(&style.pitch_modes, p + 2 * i) + 0.5 * ((p * 7 % 5) as f64 - 2.0),
                        m(&style.energy_modes, 3 * i + p) + 0.1 * ((p % 3) as f64 - 1.0),
                    )
                }
            };
            (d.round().clamp(MIN_DURATION, MAX_DURATION) as usize, s, e)
        })
        .collect()
}

/// Frame F0: semitone targets interpolated between voiced phoneme centres,
/// shifted so the voiced frames average exactly `base`.
fn f0_contour(base: f64, durations: &[usize], semis: &[f64], voiced: &[bool]) -> Vec<f32> {
    let mut anchors = Vec::new();
    let mut start = 0usize;
    for i in 0..durations.len() {
        if voiced[i] {
            anchors.push((start as f64 + durations[i] as f64 / 2.0, base * 2f64.powf(semis[i] / 12.0)));
        }
        start += durations[i];
    }
    let total = start;
    let mut frame_voiced = Vec::with_capacity(total);
    for i in 0..durations.len() {
        frame_voiced.extend(std::iter::repeat_n(voiced[i], durations[i]));
    }
    let interp = |t: f64| -> f64 {
        if t <= anchors[0].0 {
            return anchors[0].1;
        }
        for w in anchors.windows(2) {
            if t <= w[1].0 {
                let a = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + a * (w[1].1 - w[0].1);
            }
        }
        anchors.last().unwrap().1
    };
    if anchors.is_empty() {
        return vec![0.0; total];
    }
    let raw: Vec<f64> = (0..total).map(|t| if frame_voiced[t] { interp(t as f64 + 0.5) } else { 0.0 }).collect();
    let nv = frame_voiced.iter().filter(|&&v| v).count();
    let mean = raw.iter().sum::<f64>() / nv as f64;
    raw.iter().zip(&frame_voiced).map(|(&f, &v)| if v { (f - mean + base) as f32 } else { 0.0 }).collect()
}

struct Rendered {
    utt: Utterance,
    envelope: Vec<f64>,
}

fn utterance(
    spec: &ToySpec,
    lang_index: usize,
    lang: &Language,
    spk: &SpeakerInfo,
    style: Style,
    idx: usize,
    split: Split,
    centers: &[f64],
) -> Rendered {
    let tag = match style {
        Style::Neutral => 'n',
        Style::Expressive => 'e',
    };
    let id = format!("{}-{}{:03}", spk.id, tag, idx);
    let mut rng = SeededRng::derived(spec.seed, &format!("utt/{id}"));
    let n = rng.range_inclusive(spec.min_phonemes, spec.max_phonemes);
    let ids: Vec<usize> = (0..n).map(|_| rng.range_inclusive(0, lang.alphabet.len() - 1)).collect();
    let pros = prosody(spec, spec.style(style), &ids, &mut rng);
    let durations: Vec<usize> = pros.iter().map(|p| p.0).collect();
    let semis: Vec<f64> = pros.iter().map(|p| p.1).collect();
    let voiced: Vec<bool> = ids.iter().map(|&p| spec.is_voiced(lang_index, p)).collect();
    let f0 = f0_contour(spk.f0_base, &durations, &semis, &voiced);

    let templates: Vec<Vec<f64>> =
        ids.iter().map(|&p| phoneme_template(spec.seed, &lang.alphabet[p], spec.is_voiced(lang_index, p))).collect();
    let total: usize = durations.iter().sum();
    let mut energy = Vec::with_capacity(total);
    let mut mel = Vec::with_capacity(total * N_MELS);
    let mut envelope = Vec::with_capacity(total * N_MELS);
    let floor = log_floor() as f64;
    let mut t = 0;
    for (i, &d) in durations.iter().enumerate() {
        let level = spk.gain + pros[i].2 + if voiced[i] { 0.0 } else { UNVOICED_LEVEL };
        for _ in 0..d {
            energy.push(level as f32);
            let rip = (f0[t] > 0.0).then(|| ripple(centers, f0[t] as f64));
            for b in 0..N_MELS {
                let env = BASE_LEVEL + templates[i][b] + spk.tilt * (b as f64 / (N_MELS - 1) as f64 - 0.5) + level;
                envelope.push(env);
                let r = rip.as_ref().map_or(0.0, |r| r[b]);
                mel.push((env + r + spec.noise_std * rng.normal()).max(floor) as f32);
            }
            t += 1;
        }
    }
    Rendered {
        utt: Utterance {
            id,
            speaker: spk.id.clone(),
            language: lang.id.clone(),
            style,
            split,
            phonemes: ids.iter().map(|&p| lang.alphabet[p].clone()).collect(),
            alignment: durations,
            mel: MelSpectrogram::new(total, mel).expect("consistent mel size"),
            f0,
            energy,
        },
        envelope,
    }
}

/// Additive harmonic rendering of an envelope (log-mel, `[T, 80]`) and F0 track.
pub fn render_waveform(envelope: &[f64], f0: &[f32], seed: u64) -> Vec<f32> {
    let centers = mel_band_centers();
    let frames = f0.len();
    let n = frames * HOP;
    let sr = SAMPLE_RATE as f64;
    let mut rng = SeededRng::new(seed);
    let mut out = vec![0.0f64; n];
    let env_at = |t: usize, hz: f64| -> f64 {
        let row = &envelope[t * N_MELS..(t + 1) * N_MELS];
        let b = centers.partition_point(|&c| c < hz);
        if b == 0 {
            row[0]
        } else if b >= N_MELS {
            row[N_MELS - 1]
        } else {
            let a = (hz - centers[b - 1]) / (centers[b] - centers[b - 1]);
            row[b - 1] + a * (row[b] - row[b - 1])
        }
    };
    let mut phase = vec![0.0f64; 200];
    for (s, o) in out.iter_mut().enumerate() {
        let t = (s / HOP).min(frames - 1);
        let f = f0[t] as f64;
        if f > 0.0 {
            let nh = ((7500.0 / f) as usize).min(phase.len());
            let mut acc = 0.0;
            for (h, ph) in phase.iter_mut().enumerate().take(nh) {
                let hz = f * (h + 1) as f64;
                *ph += 2.0 * std::f64::consts::PI * hz / sr;
                acc += env_at(t, hz).exp() * ph.sin();
            }
            *o = acc;
        } else {
            let mean: f64 = envelope[t * N_MELS..(t + 1) * N_MELS].iter().map(|v| v.exp()).sum::<f64>() / N_MELS as f64;
            *o = mean * 10.0 * rng.normal();
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter().map(|v| (0.5 * v / peak) as f32).collect()
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.join(MANIFEST).exists() || dir.join("feats").exists() {
        if !force {
            return Err(Error::Usage(format!("{} already holds a corpus (use --force to overwrite)", dir.display())));
        }
        for sub in ["feats", "audio"] {
            let p = dir.join(sub);
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    for sub in ["feats", "audio"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Builds the corpus in memory without touching the filesystem.
pub fn build_corpus(spec: &ToySpec, root: &Path) -> Result<(Corpus, Vec<Vec<f64>>)> {
    spec.validate()?;
    let langs = spec.languages();
    let spks = speakers(spec, &langs);
    let centers = mel_band_centers();
    let per = spec.utterances_per_speaker_style;
    let n_test = (per as f64 * spec.test_fraction).round() as usize;
    let n_val = (per as f64 * spec.val_fraction).round() as usize;
    let mut rendered = Vec::new();
    'outer: for idx in 0..per {
        for spk in &spks {
            for style in [Style::Neutral, Style::Expressive] {
                if spec.max_utterances > 0 && rendered.len() == spec.max_utterances {
                    break 'outer;
                }
                let split = if idx >= per - n_test {
                    Split::Test
                } else if idx >= per - n_test - n_val {
                    Split::Val
                } else {
                    Split::Train
                };
                let li = langs.iter().position(|l| l.id == spk.language).unwrap();
                rendered.push(utterance(spec, li, &langs[li], spk, style, idx, split, &centers));
            }
        }
    }
    rendered.sort_by(|a, b| a.utt.id.cmp(&b.utt.id));
    let envelopes = rendered.iter().map(|r| r.envelope.clone()).collect();
    let corpus = Corpus {
        root: root.to_path_buf(),
        seed: spec.seed,
        family: spec.family,
        languages: langs,
        speakers: spks,
        utterances: rendered.into_iter().map(|r| r.utt).collect(),
    };
    Ok((corpus, envelopes))
}

/// Generates and writes a corpus. An existing corpus is only replaced with `force`.
pub fn generate_corpus(spec: &ToySpec, dir: &Path, force: bool) -> Result<Corpus> {
    let (corpus, envelopes) = build_corpus(spec, dir)?;
    prepare_dir(dir, force)?;
    for (u, env) in corpus.utterances.iter().zip(&envelopes) {
        write_features(dir, u)?;
        if spec.render_audio {
            let audio = render_waveform(env, &u.f0, SeededRng::derived(spec.seed, &format!("audio/{}", u.id)).next_u64());
            wav::write_wav(&dir.join("audio").join(format!("{}.wav", u.id)), &audio)?;
        }
    }
    let spec_path = dir.join("spec.toml");
    let text = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    let mpath = dir.join(MANIFEST);
    std::fs::write(&mpath, write_manifest(&corpus)).map_err(|e| Error::io(&mpath, e))?;
    Ok(corpus)
}

pub fn load_spec(dir: &Path) -> Result<ToySpec> {
    let p = dir.join("spec.toml");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}
