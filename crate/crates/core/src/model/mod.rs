//! The full generator (text/prompt encoders, prosody predictor, source-filter
//! generators, adaptive decoder) and the multi-window discriminator.

pub mod acoustic;
pub mod decoder;
pub mod discriminator;
pub mod layers;
pub mod params;
pub mod prosody;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{AcousticUnitSequence, MelSpectrogram};
use crate::numerics::{Tensor, Var};

pub use acoustic::{PromptBundle, RepKind, Representation};
pub use params::{Ctx, Init, ParamStore};
pub use prosody::{Sampling, StreamLogits};

/// Which generator representation reaches the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepMode {
    Coarse,
    /// Source representation replaced by zeros.
    FilterOnly,
    /// Filter representation replaced by zeros.
    SourceOnly,
}

/// Architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Graph nodes produced by one teacher-forced generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorPass {
    pub mel: Var,
    pub logits: StreamLogits,
}

impl Model {
    /// Creates every generator and discriminator parameter, name-seeded from `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        {
            let mut ctx = Ctx::initializing(&mut params, seed);
            let n = 2;
            let ids = vec![0; n];
            let units = AcousticUnitSequence::new(vec![1; n], vec![32; n], vec![32; n])?;
            let prompt = MelSpectrogram::new(4, vec![0.0; 4 * cfg.n_mels])?;
            let noise = Tensor::zeros(&[cfg.adaptive.noise_dim]);
            let pass = generator_pass(&mut ctx, &cfg, &ids, &units, &prompt, &prompt, &noise)?;
            let longest = *cfg.discriminator.windows.iter().max().unwrap();
            let mel = ctx.input(Tensor::zeros(&[longest, cfg.n_mels]));
            for &w in &cfg.discriminator.windows {
                discriminator::discriminate(&mut ctx, &cfg, mel, w, 0)?;
            }
            let _ = pass;
        }
        Ok(Model { cfg, params })
    }

    pub fn phoneme_ids(&self, symbols: &[String]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| self.cfg.phoneme_id(s).ok_or_else(|| Error::Data(format!("unknown phoneme `{s}`"))))
            .collect()
    }

    /// Generator parameters (everything but the discriminator) and discriminator parameters.
    pub fn split(&self) -> (ParamStore, ParamStore) {
        let (d, g) = self.params.split_prefix("disc.");
        (g, d)
    }
}

/// Frame-level representations and decoder output for given units.
#[allow(clippy::too_many_arguments)]
pub fn acoustic_path(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    text_hidden: Var,
    units: &AcousticUnitSequence,
    speaker: &PromptBundle,
    noise: &Tensor<f32>,
    mode: RepMode,
) -> Result<(Var, Option<Representation>, Option<Representation>)> {
    let durations = units.frames();
    let inp = acoustic::upsample_inputs(ctx, cfg, text_hidden, units.pitch(), units.energy(), &durations)?;
    let (coarse, filter, source) = if cfg.ablation.no_source_filter {
        let j = acoustic::joint_generator(ctx, cfg, &inp, speaker.hidden)?;
        (acoustic::project_coarse(ctx, cfg, j.var)?, None, None)
    } else {
        let f = acoustic::filter_generator(ctx, cfg, &inp, speaker.hidden)?;
        let s = acoustic::source_generator(ctx, cfg, &inp, speaker.hidden)?;
        let zeros = ctx.input(Tensor::zeros(ctx.g.shape(f.var)));
        let coarse = match mode {
            RepMode::Coarse => acoustic::fuse(ctx, cfg, f.var, s.var)?,
            RepMode::FilterOnly => acoustic::fuse(ctx, cfg, f.var, zeros)?,
            RepMode::SourceOnly => acoustic::fuse(ctx, cfg, zeros, s.var)?,
        };
        (coarse, Some(f), Some(s))
    };
    let w = if cfg.ablation.no_adaptive_kernels {
        None
    } else {
        let z = ctx.input(noise.clone());
        Some(decoder::map_style(ctx, cfg, speaker.global_style, z)?)
    };
    let mel = decoder::decode(ctx, cfg, coarse, w)?;
    Ok((mel, filter, source))
}

/// Teacher-forced pass: ground-truth units drive both the prosody loss and
/// the acoustic path.
pub fn generator_pass(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    phoneme_ids: &[usize],
    units: &AcousticUnitSequence,
    speaker_prompt: &MelSpectrogram,
    prosody_prompt: &MelSpectrogram,
    noise: &Tensor<f32>,
) -> Result<GeneratorPass> {
    if units.len() != phoneme_ids.len() {
        return Err(Error::Data(format!("{} unit steps for {} phonemes", units.len(), phoneme_ids.len())));
    }
    let text = acoustic::encode_text(ctx, cfg, phoneme_ids)?;
    let speaker = acoustic::encode_prompt_bundle(ctx, cfg, speaker_prompt)?;
    let r_p = acoustic::encode_prompt(ctx, cfg, prosody_prompt)?;
    let prefix = prosody::make_prefix(ctx, cfg, text, r_p)?;
    let logits = prosody::teacher_forced(ctx, cfg, &prefix, units)?;
    let (mel, _, _) = acoustic_path(ctx, cfg, text, units, &speaker, noise, RepMode::Coarse)?;
    Ok(GeneratorPass { mel, logits })
}
