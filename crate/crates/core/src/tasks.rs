//! Inference: zero-shot, cross-lingual, style transfer and prosody control,
//! plus single-representation decoding for analysis.

use crate::error::{Error, Result};
use crate::features::units::dequantize_pitch;
use crate::features::{AcousticUnitSequence, MelSpectrogram, Stream};
use crate::model::decoder::sample_noise;
use crate::model::{acoustic, acoustic_path, prosody, Ctx, Model, RepMode, Sampling};
use crate::numerics::{SeededRng, Tensor};

#[derive(Clone, Debug)]
pub struct SynthesisRequest {
    pub id: String,
    pub phonemes: Vec<String>,
    /// Language of the text.
    pub language: Option<String>,
    /// `y_s`: speaker identity and generator modulation.
    pub speaker_prompt: MelSpectrogram,
    pub prompt_language: Option<String>,
    /// `y_p`: prosody prompt; `None` means `y_s`.
    pub style_prompt: Option<MelSpectrogram>,
    /// Offsets added to decoded (duration, pitch, energy) units.
    pub unit_offsets: [i64; 3],
    pub sampling: Sampling,
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn new(id: impl Into<String>, phonemes: Vec<String>, speaker_prompt: MelSpectrogram, seed: u64) -> Self {
        SynthesisRequest {
            id: id.into(),
            phonemes,
            language: None,
            speaker_prompt,
            prompt_language: None,
            style_prompt: None,
            unit_offsets: [0; 3],
            sampling: Sampling::Greedy,
            seed,
        }
    }

    pub fn is_cross_lingual(&self) -> bool {
        matches!((&self.language, &self.prompt_language), (Some(a), Some(b)) if a != b)
    }

    pub fn is_style_transfer(&self) -> bool {
        self.style_prompt.as_ref().is_some_and(|p| p != &self.speaker_prompt)
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub id: String,
    pub mel: MelSpectrogram,
    pub units: AcousticUnitSequence,
    /// Per-frame normalised pitch from dequantised units.
    pub f0_proxy: Vec<f64>,
    pub mode: RepMode,
    pub seed: u64,
    pub noise: Tensor<f32>,
    pub cross_lingual: bool,
    pub style_transfer: bool,
}

impl SynthesisResult {
    pub fn mean_pitch(&self) -> f64 {
        self.f0_proxy.iter().sum::<f64>() / self.f0_proxy.len().max(1) as f64
    }
}

/// Frame-level pitch proxy: each phoneme's dequantised pitch repeated over its frames.
pub fn f0_proxy(units: &AcousticUnitSequence) -> Vec<f64> {
    units
        .pitch()
        .iter()
        .zip(units.frames())
        .flat_map(|(&p, n)| std::iter::repeat_n(dequantize_pitch(p), n))
        .collect()
}

pub fn synthesize(model: &Model, req: &SynthesisRequest) -> Result<SynthesisResult> {
    analyze_representation(model, req, RepMode::Coarse)
}

/// Runs the inference flow, passing only the chosen representation to the decoder.
pub fn analyze_representation(model: &Model, req: &SynthesisRequest, mode: RepMode) -> Result<SynthesisResult> {
    let cfg = &model.cfg;
    if req.phonemes.is_empty() {
        return Err(Error::Data(format!("request {}: empty phoneme sequence", req.id)));
    }
    if model.params.is_empty() {
        return Err(Error::Data("model has no parameters".into()));
    }
    let ids = model.phoneme_ids(&req.phonemes).map_err(|e| Error::Data(format!("request {}: {e}", req.id)))?;
    let style = req.style_prompt.as_ref().unwrap_or(&req.speaker_prompt);

    let mut ctx = Ctx::new(&model.params, false);
    let text = acoustic::encode_text(&mut ctx, cfg, &ids)?;
    let speaker = acoustic::encode_prompt_bundle(&mut ctx, cfg, &req.speaker_prompt)?;
    let r_p = acoustic::encode_prompt(&mut ctx, cfg, style)?;
    let decoded = prosody::decode(
        &model.params,
        cfg,
        ctx.g.value(text),
        ctx.g.value(r_p),
        req.sampling,
        req.seed,
    )?;
    let mut units = decoded;
    for (s, &off) in Stream::ALL.iter().zip(&req.unit_offsets) {
        if off != 0 {
            units = units.manipulate(*s, off);
        }
    }
    let mut rng = SeededRng::derived(req.seed, "synth.noise");
    let noise = sample_noise(&mut rng, cfg.adaptive.noise_dim);
    let (mel, _, _) = acoustic_path(&mut ctx, cfg, text, &units, &speaker, &noise, mode)?;
    let value = ctx.g.value(mel);
    let mel = MelSpectrogram::new(value.shape()[0], value.data().to_vec())?;
    Ok(SynthesisResult {
        id: req.id.clone(),
        f0_proxy: f0_proxy(&units),
        mel,
        units,
        mode,
        seed: req.seed,
        noise,
        cross_lingual: req.is_cross_lingual(),
        style_transfer: req.is_style_transfer(),
    })
}

/// Global style embedding of a mel.
pub fn style_embedding(model: &Model, mel: &MelSpectrogram) -> Result<Vec<f32>> {
    let mut ctx = Ctx::new(&model.params, false);
    let v = acoustic::global_style(&mut ctx, &model.cfg, mel)?;
    Ok(ctx.g.value(v).data().to_vec())
}
