//! Run configuration: architecture, training hyperparameters and paths.
//!
//! Stored as TOML with one section per module. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ff: usize,
    pub kernel: usize,
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ff: usize,
    pub kernel: usize,
    pub heads: usize,
    /// Self-attention radius in frames; 0 means unrestricted.
    pub attn_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsodyConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ff: usize,
    pub heads: usize,
    pub duration_codebook: usize,
    pub pitch_codebook: usize,
    pub energy_codebook: usize,
    /// Longest phoneme sequence the learned step positions cover.
    pub max_phonemes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ff: usize,
    pub kernel: usize,
    pub heads: usize,
    /// Gaussian upsampling width in frames.
    pub upsample_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub mapping_depth: usize,
    pub mapped_style_dim: usize,
    pub noise_dim: usize,
    pub global_style_dim: usize,
    pub bank_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub windows: Vec<usize>,
    pub conv_size: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// One generator over phoneme, pitch and energy inputs instead of the filter/source pair.
    #[serde(default)]
    pub no_source_filter: bool,
    /// Plain convolutions in the acoustic decoder.
    #[serde(default)]
    pub no_adaptive_kernels: bool,
    /// No prompt modulation inside the generators.
    #[serde(default)]
    pub no_film: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_mels: usize,
    /// Phoneme symbols; the index is the embedding id.
    pub phonemes: Vec<String>,
    pub text_encoder: EncoderConfig,
    pub prompt_encoder: PromptEncoderConfig,
    pub prosody: ProsodyConfig,
    pub generator: GeneratorConfig,
    pub decoder: EncoderConfig,
    pub adaptive: AdaptiveConfig,
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl ModelConfig {
    /// Quarter-width configuration with the full layer layout.
    pub fn desk(phonemes: Vec<String>) -> Self {
        let enc = |layers, kernel| EncoderConfig { layers, hidden: 128, ff: 512, kernel, heads: 4 };
        ModelConfig {
            n_mels: 80,
            phonemes,
            text_encoder: enc(6, 3),
            prompt_encoder: PromptEncoderConfig {
                layers: 3,
                hidden: 128,
                ff: 512,
                kernel: 9,
                heads: 4,
                attn_window: 8,
            },
            prosody: ProsodyConfig {
                layers: 3,
                hidden: 128,
                ff: 512,
                heads: 4,
                duration_codebook: 32,
                pitch_codebook: 64,
                energy_codebook: 64,
                max_phonemes: 256,
            },
            generator: GeneratorConfig {
                layers: 3,
                hidden: 128,
                ff: 512,
                kernel: 3,
                heads: 4,
                upsample_sigma: 1.0,
            },
            decoder: enc(3, 3),
            adaptive: AdaptiveConfig {
                mapping_depth: 4,
                mapped_style_dim: 64,
                noise_dim: 16,
                global_style_dim: 128,
                bank_size: 4,
            },
            discriminator: DiscriminatorConfig { windows: vec![32, 64, 128], conv_size: 3, hidden: 32 },
            ablation: AblationConfig::default(),
        }
    }

    /// Full-size layout (hidden 512, 8 heads, 2048 feed-forward).
    pub fn paper_scale(phonemes: Vec<String>) -> Self {
        let enc = |layers, kernel| EncoderConfig { layers, hidden: 512, ff: 2048, kernel, heads: 8 };
        let mut c = Self::desk(phonemes);
        c.text_encoder = enc(6, 3);
        c.prompt_encoder =
            PromptEncoderConfig { layers: 3, hidden: 512, ff: 2048, kernel: 9, heads: 8, attn_window: 0 };
        c.prosody.hidden = 512;
        c.prosody.ff = 2048;
        c.prosody.heads = 8;
        c.generator = GeneratorConfig { layers: 3, hidden: 512, ff: 2048, kernel: 3, heads: 8, upsample_sigma: 1.0 };
        c.decoder = enc(3, 3);
        c.adaptive =
            AdaptiveConfig { mapping_depth: 4, mapped_style_dim: 256, noise_dim: 64, global_style_dim: 512, bank_size: 4 };
        c.discriminator = DiscriminatorConfig { windows: vec![32, 64, 128], conv_size: 3, hidden: 128 };
        c
    }

    /// Minimal widths with the full module layout, for tests and smoke runs.
    pub fn tiny(phonemes: Vec<String>) -> Self {
        let enc = |layers, kernel| EncoderConfig { layers, hidden: 16, ff: 32, kernel, heads: 2 };
        let mut c = Self::desk(phonemes);
        c.text_encoder = enc(2, 3);
        c.prompt_encoder = PromptEncoderConfig { layers: 1, hidden: 16, ff: 32, kernel: 3, heads: 2, attn_window: 4 };
        c.prosody.layers = 2;
        c.prosody.hidden = 16;
        c.prosody.ff = 32;
        c.prosody.heads = 2;
        c.prosody.max_phonemes = 64;
        c.generator = GeneratorConfig { layers: 1, hidden: 16, ff: 32, kernel: 3, heads: 2, upsample_sigma: 1.0 };
        c.decoder = enc(1, 3);
        c.adaptive = AdaptiveConfig { mapping_depth: 2, mapped_style_dim: 8, noise_dim: 4, global_style_dim: 16, bank_size: 2 };
        c.discriminator = DiscriminatorConfig { windows: vec![32, 64, 128], conv_size: 3, hidden: 4 };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let heads_ok = |name: &str, hidden: usize, heads: usize| {
            if heads == 0 || hidden % heads != 0 {
                Err(Error::Config(format!("{name}: hidden {hidden} not divisible by heads {heads}")))
            } else {
                Ok(())
            }
        };
        heads_ok("text_encoder", self.text_encoder.hidden, self.text_encoder.heads)?;
        heads_ok("prompt_encoder", self.prompt_encoder.hidden, self.prompt_encoder.heads)?;
        heads_ok("prosody", self.prosody.hidden, self.prosody.heads)?;
        heads_ok("generator", self.generator.hidden, self.generator.heads)?;
        heads_ok("decoder", self.decoder.hidden, self.decoder.heads)?;
        if self.n_mels != crate::features::N_MELS {
            return Err(Error::Config(format!("n_mels must be {}", crate::features::N_MELS)));
        }
        if self.phonemes.is_empty() {
            return Err(Error::Config("phoneme inventory is empty".into()));
        }
        let p = &self.prosody;
        if p.duration_codebook < 2 || p.pitch_codebook < 2 || p.energy_codebook < 2 {
            return Err(Error::Config("codebooks need at least two entries".into()));
        }
        if self.adaptive.bank_size == 0 || self.adaptive.mapping_depth == 0 {
            return Err(Error::Config("adaptive: bank_size and mapping_depth must be positive".into()));
        }
        if self.discriminator.windows.is_empty() || self.discriminator.windows.contains(&0) {
            return Err(Error::Config("discriminator windows must be positive".into()));
        }
        if !(self.generator.upsample_sigma > 0.0) {
            return Err(Error::Config("generator.upsample_sigma must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(canon.as_bytes()))
    }

    pub fn phoneme_id(&self, sym: &str) -> Option<usize> {
        self.phonemes.iter().position(|p| p == sym)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    /// NOAM multiplier; the peak rate is `lr_scale / sqrt(warmup_steps)`.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub lambda_adv: f64,
    /// Adversarial loss and discriminator updates start at this step.
    pub adv_start_step: u64,
    /// Utterances shorter than this are skipped.
    pub min_frames: usize,
    pub prompt_min_frames: usize,
    pub prompt_max_frames: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1234,
            steps: 20_000,
            batch_size: 8,
            warmup_steps: 4000,
            lr_scale: 1e-3 * (4000f64).sqrt(),
            beta1: 0.8,
            beta2: 0.99,
            adam_eps: 1e-9,
            weight_decay: 0.01,
            grad_clip: 1.0,
            lambda_adv: 1.0,
            adv_start_step: 10_000,
            min_frames: 16,
            prompt_min_frames: 8,
            prompt_max_frames: 256,
            checkpoint_every: 1000,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    /// Schedule for the ten-utterance overfit corpus: small batch, short
    /// warmup, no adversarial phase.
    pub fn overfit() -> Self {
        let warmup = 200;
        TrainConfig {
            steps: 5000,
            batch_size: 2,
            warmup_steps: warmup,
            lr_scale: 2e-3 * (warmup as f64).sqrt(),
            lambda_adv: 0.0,
            checkpoint_every: 1000,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hash over everything that influences a run's outputs.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(canon.as_bytes()))
    }
}
