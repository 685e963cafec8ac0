//! Corpus records, the on-disk corpus layout, and the synthetic toy-speech
//! generator with its ground-truth oracles.
//!
//! A corpus directory holds `manifest.tsv`, one matrix file per feature per
//! utterance under `feats/`, the generator spec as `spec.toml`, and
//! optionally rendered audio under `audio/`.

pub mod matrix;
pub mod oracle;
pub mod toy;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::units::utterance_units;
use crate::features::{AcousticUnitSequence, MelSpectrogram, SpeakerStats, N_MELS};
use crate::numerics::Tensor;

pub use toy::{generate_corpus, ProsodyFamily, StyleParams, ToySpec};

pub const MANIFEST: &str = "manifest.tsv";
pub const MANIFEST_MAGIC: &str = "promptts-corpus";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Neutral,
    Expressive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    other => Err(Error::Data(format!("unknown {} `{other}`", stringify!($t).to_lowercase()))),
                }
            }
        }
    };
}

text_enum!(Style, Neutral => "neutral", Expressive => "expressive");
text_enum!(Split, Train => "train", Val => "val", Test => "test");
text_enum!(ProsodyFamily, Natural => "natural", Deterministic => "deterministic");

#[derive(Clone, Debug, PartialEq)]
pub struct Language {
    pub id: String,
    pub alphabet: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerInfo {
    pub id: String,
    pub language: String,
    /// Mean voiced F0 in Hz.
    pub f0_base: f64,
    /// Spectral slope across the mel bands (log units, band 0 to band 79).
    pub tilt: f64,
    /// Log-level offset.
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub language: String,
    pub style: Style,
    pub split: Split,
    pub phonemes: Vec<String>,
    /// Frames per phoneme.
    pub alignment: Vec<usize>,
    pub mel: MelSpectrogram,
    /// Per-frame F0 in Hz; 0 marks unvoiced frames.
    pub f0: Vec<f32>,
    /// Per-frame log-level.
    pub energy: Vec<f32>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    pub fn voiced(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Data(format!("utterance {}: {m}", self.id));
        if self.phonemes.len() != self.alignment.len() {
            return Err(bad(format!("{} phonemes, {} durations", self.phonemes.len(), self.alignment.len())));
        }
        let total: usize = self.alignment.iter().sum();
        if total != self.frames() {
            return Err(bad(format!("alignment sums to {total}, mel has {} frames", self.frames())));
        }
        if self.f0.len() != self.frames() || self.energy.len() != self.frames() {
            return Err(bad("frame feature lengths differ from the mel".into()));
        }
        if self.alignment.contains(&0) {
            return Err(bad("zero-length phoneme".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub seed: u64,
    pub family: ProsodyFamily,
    pub languages: Vec<Language>,
    pub speakers: Vec<SpeakerInfo>,
    /// Sorted by id.
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerInfo> {
        self.speakers.iter().find(|s| s.id == id)
    }

    pub fn language(&self, id: &str) -> Option<&Language> {
        self.languages.iter().find(|l| l.id == id)
    }

    /// Every phoneme symbol, language by language.
    pub fn phoneme_inventory(&self) -> Vec<String> {
        self.languages.iter().flat_map(|l| l.alphabet.iter().cloned()).collect()
    }

    /// F0 and energy statistics per speaker over all of that speaker's utterances.
    pub fn speaker_stats(&self) -> Result<BTreeMap<String, SpeakerStats>> {
        let mut out = BTreeMap::new();
        for s in &self.speakers {
            let mut f0 = Vec::new();
            let mut en = Vec::new();
            for u in self.utterances.iter().filter(|u| u.speaker == s.id) {
                f0.extend(u.f0.iter().filter(|&&f| f > 0.0).map(|&f| f as f64));
                en.extend(u.energy.iter().map(|&e| e as f64));
            }
            if f0.is_empty() {
                continue;
            }
            out.insert(s.id.clone(), SpeakerStats::from_frames(&s.id, &f0, &en)?);
        }
        Ok(out)
    }
}

/// Ground-truth unit sequence of an utterance.
pub fn units_for(u: &Utterance, stats: &SpeakerStats) -> Result<AcousticUnitSequence> {
    let f0: Vec<f64> = u.f0.iter().map(|&f| f as f64).collect();
    let en: Vec<f64> = u.energy.iter().map(|&e| e as f64).collect();
    utterance_units(&u.alignment, &f0, &u.voiced(), &en, stats)
}

pub(crate) fn feature_paths(root: &Path, id: &str) -> [PathBuf; 3] {
    let d = root.join("feats");
    [d.join(format!("{id}.mel")), d.join(format!("{id}.f0")), d.join(format!("{id}.energy"))]
}

pub(crate) fn write_manifest(c: &Corpus) -> String {
    let mut s = format!("{MANIFEST_MAGIC}\t{SCHEMA_VERSION}\nseed\t{}\nfamily\t{}\n", c.seed, c.family);
    for l in &c.languages {
        s += &format!("language\t{}\t{}\n", l.id, l.alphabet.join(" "));
    }
    for sp in &c.speakers {
        s += &format!("speaker\t{}\t{}\t{}\t{}\t{}\n", sp.id, sp.language, sp.f0_base, sp.tilt, sp.gain);
    }
    for u in &c.utterances {
        let align: Vec<String> = u.alignment.iter().map(|d| d.to_string()).collect();
        s += &format!(
            "utterance\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            u.id,
            u.speaker,
            u.language,
            u.style,
            u.split,
            u.phonemes.join(" "),
            align.join(",")
        );
    }
    s
}

pub(crate) fn write_features(root: &Path, u: &Utterance) -> Result<()> {
    let [m, f, e] = feature_paths(root, &u.id);
    matrix::write(&m, &Tensor::new(&[u.frames(), N_MELS], u.mel.data().to_vec())?)?;
    matrix::write(&f, &Tensor::new(&[u.frames()], u.f0.clone())?)?;
    matrix::write(&e, &Tensor::new(&[u.frames()], u.energy.clone())?)
}

/// Loads a corpus directory. Utterances come back sorted by id.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let fmt_err = |line: usize, msg: String| Error::Format { path: path.clone(), msg: format!("line {line}: {msg}") };
    let mut lines = text.lines().enumerate();
    match lines.next().map(|(_, l)| l.split('\t').collect::<Vec<_>>()) {
        Some(h) if h.len() == 2 && h[0] == MANIFEST_MAGIC => {
            let v: u32 = h[1].parse().map_err(|_| fmt_err(1, format!("bad schema version `{}`", h[1])))?;
            if v != SCHEMA_VERSION {
                return Err(fmt_err(1, format!("unsupported schema version {v} (expected {SCHEMA_VERSION})")));
            }
        }
        _ => return Err(fmt_err(1, "missing corpus header".into())),
    }
    let mut seed = None;
    let mut family = None;
    let mut languages = Vec::new();
    let mut speakers = Vec::new();
    let mut utterances = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let need = |k: usize| if f.len() == k { Ok(()) } else { Err(fmt_err(n, format!("expected {k} fields, found {}", f.len()))) };
        let num = |s: &str| s.parse::<f64>().map_err(|_| fmt_err(n, format!("bad number `{s}`")));
        match f[0] {
            "seed" => {
                need(2)?;
                seed = Some(f[1].parse::<u64>().map_err(|_| fmt_err(n, "bad seed".into()))?);
            }
            "family" => {
                need(2)?;
                family = Some(f[1].parse::<ProsodyFamily>()?);
            }
            "language" => {
                need(3)?;
                languages.push(Language { id: f[1].into(), alphabet: f[2].split(' ').map(String::from).collect() });
            }
            "speaker" => {
                need(6)?;
                speakers.push(SpeakerInfo {
                    id: f[1].into(),
                    language: f[2].into(),
                    f0_base: num(f[3])?,
                    tilt: num(f[4])?,
                    gain: num(f[5])?,
                });
            }
            "utterance" => {
                need(8)?;
                let id = f[1].to_string();
                let rec_err = |m: String| Error::Data(format!("record {id}: {m}"));
                let alignment = f[7]
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|_| rec_err(format!("bad duration `{d}`"))))
                    .collect::<Result<Vec<_>>>()?;
                let [mp, fp, ep] = feature_paths(root, &id);
                let load = |p: &Path| matrix::read(p).map_err(|e| rec_err(e.to_string()));
                let mel_t = load(&mp)?;
                if mel_t.rank() != 2 || mel_t.shape()[1] != N_MELS {
                    return Err(rec_err(format!("mel has shape {:?}", mel_t.shape())));
                }
                let frames = mel_t.shape()[0];
                let u = Utterance {
                    speaker: f[2].into(),
                    language: f[3].into(),
                    style: f[4].parse().map_err(|e: Error| rec_err(e.to_string()))?,
                    split: f[5].parse().map_err(|e: Error| rec_err(e.to_string()))?,
                    phonemes: f[6].split(' ').map(String::from).collect(),
                    alignment,
                    mel: MelSpectrogram::new(frames, mel_t.into_data())?,
                    f0: load(&fp)?.into_data(),
                    energy: load(&ep)?.into_data(),
                    id,
                };
                u.validate()?;
                utterances.push(u);
            }
            other => return Err(fmt_err(n, format!("unknown record kind `{other}`"))),
        }
    }
    utterances.sort_by(|a, b| a.id.cmp(&b.id));
    let corpus = Corpus {
        root: root.to_path_buf(),
        seed: seed.ok_or_else(|| fmt_err(0, "missing seed".into()))?,
        family: family.ok_or_else(|| fmt_err(0, "missing family".into()))?,
        languages,
        speakers,
        utterances,
    };
    for u in &corpus.utterances {
        let lang = corpus.language(&u.language).ok_or_else(|| Error::Data(format!("record {}: unknown language", u.id)))?;
        if corpus.speaker(&u.speaker).is_none() {
            return Err(Error::Data(format!("record {}: unknown speaker {}", u.id, u.speaker)));
        }
        if let Some(p) = u.phonemes.iter().find(|p| !lang.alphabet.contains(p)) {
            return Err(Error::Data(format!("record {}: phoneme `{p}` not in language {}", u.id, lang.id)));
        }
    }
    Ok(corpus)
}
