use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use promptts_core::corpus::{load_corpus, matrix, Corpus};
use promptts_core::features::wav::read_wav;
use promptts_core::features::{extract_mel, MelSpectrogram, N_MELS};
use promptts_core::Error;

/// A resolved prompt: its mel, the language tag when known, and a stable
/// description for manifests.
pub struct Prompt {
    pub mel: MelSpectrogram,
    pub language: Option<String>,
    pub source: String,
}

pub fn open_corpus(corpus: Option<&Path>) -> Result<Option<Corpus>> {
    corpus.map(|p| load_corpus(p).with_context(|| format!("loading corpus {}", p.display()))).transpose()
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let t = matrix::read(path)?;
    if t.rank() != 2 || t.shape()[1] != N_MELS {
        return Err(Error::Data(format!("{}: expected a [frames, {N_MELS}] mel, got {:?}", path.display(), t.shape())).into());
    }
    Ok(MelSpectrogram::new(t.shape()[0], t.into_data())?)
}

/// Resolves a corpus utterance id, a `.wav` file, or a mel matrix file.
pub fn resolve(spec: &str, corpus: Option<&Corpus>) -> Result<Prompt> {
    let path = PathBuf::from(spec);
    if path.is_file() {
        let digest = crate::manifest::file_digest(&path)?;
        let mel = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            extract_mel(&read_wav(&path)?)?
        } else {
            read_mel(&path)?
        };
        return Ok(Prompt { mel, language: None, source: format!("{spec}@sha256:{digest}") });
    }
    let corpus = corpus.ok_or_else(|| {
        Error::Usage(format!("prompt `{spec}` is not a file and no corpus was given (--corpus or ${})", crate::CORPUS_ENV))
    })?;
    let u = corpus
        .utterance(spec)
        .ok_or_else(|| Error::Data(format!("no utterance `{spec}` in {}", corpus.root.display())))?;
    Ok(Prompt { mel: u.mel.clone(), language: Some(u.language.clone()), source: format!("utterance:{spec}") })
}

/// Phonemes from `--text` or `--text-from`, and the language they belong to when a corpus is known.
pub fn phonemes(text: Option<&str>, text_from: Option<&str>, corpus: Option<&Corpus>) -> Result<(Vec<String>, Option<String>)> {
    let symbols: Vec<String> = match (text, text_from) {
        (Some(t), None) => t.split_whitespace().map(str::to_string).collect(),
        (None, Some(id)) => {
            let c = corpus.ok_or_else(|| Error::Usage("--text-from needs a corpus".into()))?;
            c.utterance(id).ok_or_else(|| anyhow!(Error::Data(format!("no utterance `{id}`"))))?.phonemes.clone()
        }
        _ => bail!(Error::Usage("give exactly one of --text and --text-from".into())),
    };
    if symbols.is_empty() {
        bail!(Error::Usage("empty phoneme sequence".into()));
    }
    let lang = corpus.and_then(|c| {
        c.languages.iter().find(|l| symbols.iter().all(|s| l.alphabet.contains(s))).map(|l| l.id.clone())
    });
    Ok((symbols, lang))
}
