//! Source-filter acoustic model: text and prompt encoders, global style
//! embedder, Gaussian upsampling, FiLM-modulated filter/source generators
//! and their fusion into the coarse mel-representation.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::numerics::{AttnMask, Graph, Scalar, Tensor, TensorError, Var};

use super::layers::{self, add_positions, fft_block, layer_norm, linear, linear_const, BlockShape};
use super::params::{Ctx, Init};

/// Which representation a frame-level hidden sequence is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepKind {
    Filter,
    Source,
    Coarse,
}

/// Frame-level hidden sequence inside a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Representation {
    pub kind: RepKind,
    pub var: Var,
    pub frames: usize,
}

/// Encoded prompt: per-frame hiddens `r` and the global style vector `r_g`.
#[derive(Clone, Copy, Debug)]
pub struct PromptBundle {
    pub hidden: Var,
    pub frames: usize,
    pub global_style: Var,
}

pub fn encode_text(ctx: &mut Ctx, cfg: &ModelConfig, phoneme_ids: &[usize]) -> Result<Var> {
    if phoneme_ids.is_empty() {
        return Err(Error::Data("empty phoneme sequence".into()));
    }
    let c = &cfg.text_encoder;
    let table = ctx.param("text.emb", &[cfg.phonemes.len(), c.hidden], Init::Normal(0.3))?;
    let mut x = ctx.g.embedding(table, phoneme_ids)?;
    x = add_positions(ctx, x, phoneme_ids.len(), c.hidden)?;
    let shape = BlockShape { dim: c.hidden, ff: c.ff, heads: c.heads, kernel: c.kernel };
    for l in 0..c.layers {
        x = fft_block(ctx, &format!("text.b{l}"), x, shape, AttnMask::None)?;
    }
    layer_norm(ctx, "text.ln", x, c.hidden)
}

pub fn mel_input(ctx: &mut Ctx, mel: &MelSpectrogram) -> Result<Var> {
    Ok(ctx.input(Tensor::new(&[mel.frames(), crate::features::N_MELS], mel.data().to_vec())?))
}

/// Per-frame prompt hiddens. Attention is restricted to a band of
/// `attn_window` frames when that is non-zero.
pub fn encode_prompt(ctx: &mut Ctx, cfg: &ModelConfig, prompt: &MelSpectrogram) -> Result<Var> {
    if prompt.frames() == 0 {
        return Err(Error::Data("empty prompt".into()));
    }
    let c = &cfg.prompt_encoder;
    let m = mel_input(ctx, prompt)?;
    let mut x = linear(ctx, "prompt.in", m, cfg.n_mels, c.hidden)?;
    x = add_positions(ctx, x, prompt.frames(), c.hidden)?;
    let mask = if c.attn_window == 0 { AttnMask::None } else { AttnMask::Band(c.attn_window) };
    let shape = BlockShape { dim: c.hidden, ff: c.ff, heads: c.heads, kernel: c.kernel };
    for l in 0..c.layers {
        x = fft_block(ctx, &format!("prompt.b{l}"), x, shape, mask)?;
    }
    layer_norm(ctx, "prompt.ln", x, c.hidden)
}

/// Frames on each side that influence one output frame of the prompt encoder.
pub fn prompt_receptive_radius(cfg: &ModelConfig) -> Option<usize> {
    let c = &cfg.prompt_encoder;
    if c.attn_window == 0 {
        return None;
    }
    // attention band + two same-padded convolutions per block
    Some(c.layers * (c.attn_window + 2 * ((c.kernel - 1) / 2)))
}

/// Global style embedding: convolutional encoder, mean over time, projection.
pub fn global_style(ctx: &mut Ctx, cfg: &ModelConfig, prompt: &MelSpectrogram) -> Result<Var> {
    if prompt.frames() == 0 {
        return Err(Error::Data("empty prompt".into()));
    }
    let h = cfg.prompt_encoder.hidden;
    let m = mel_input(ctx, prompt)?;
    let x = layers::conv1d(ctx, "style.c1", m, cfg.n_mels, h, 3)?;
    let x = ctx.g.relu(x)?;
    let x = layers::conv1d(ctx, "style.c2", x, h, h, 3)?;
    let x = ctx.g.relu(x)?;
    let pooled = ctx.g.mean_axis(x, 0)?;
    linear(ctx, "style.out", pooled, h, cfg.adaptive.global_style_dim)
}

pub fn encode_prompt_bundle(ctx: &mut Ctx, cfg: &ModelConfig, prompt: &MelSpectrogram) -> Result<PromptBundle> {
    let hidden = encode_prompt(ctx, cfg, prompt)?;
    let global_style = global_style(ctx, cfg, prompt)?;
    Ok(PromptBundle { hidden, frames: prompt.frames(), global_style })
}

/// Row-stochastic Gaussian upsampling weights, `[Σd, N]` row-major.
///
/// Token `i` is centred at `Σ_{j<i} d_j + d_i/2`; frame `t` sits at `t + 0.5`.
pub fn gaussian_weights(durations: &[usize], sigma: f64) -> std::result::Result<Vec<f64>, TensorError> {
    if let Some(&d) = durations.iter().find(|&&d| d < 1) {
        return Err(TensorError::Shape {
            op: "gaussian_upsample",
            detail: format!("durations must be >= 1, got {d}"),
        });
    }
    let n = durations.len();
    let total: usize = durations.iter().sum();
    let mut centers = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &d in durations {
        centers.push(acc + d as f64 / 2.0);
        acc += d as f64;
    }
    let mut w = vec![0.0; total * n];
    for t in 0..total {
        let pos = t as f64 + 0.5;
        let row = &mut w[t * n..(t + 1) * n];
        let logits: Vec<f64> = centers.iter().map(|c| -(pos - c).powi(2) / (2.0 * sigma * sigma)).collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (r, l) in row.iter_mut().zip(&logits) {
            *r = (l - mx).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
    }
    Ok(w)
}

/// Expands per-token hiddens `[N, C]` to `[Σd, C]` frames.
pub fn gaussian_upsample<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    durations: &[usize],
    sigma: f64,
) -> std::result::Result<Var, TensorError> {
    let n = g.shape(tokens)[0];
    if n != durations.len() {
        return Err(TensorError::Shape {
            op: "gaussian_upsample",
            detail: format!("{} tokens, {} durations", n, durations.len()),
        });
    }
    let w = gaussian_weights(durations, sigma)?;
    let total: usize = durations.iter().sum();
    let wt = g.constant(Tensor::new(&[total, n], w.into_iter().map(T::lit).collect())?);
    g.matmul(wt, tokens)
}

/// `h' = γ ⊙ h + β`.
pub fn film_modulate<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    gamma: Var,
    beta: Var,
) -> std::result::Result<Var, TensorError> {
    if g.shape(h) != g.shape(gamma) || g.shape(h) != g.shape(beta) {
        return Err(TensorError::Shape {
            op: "film_modulate",
            detail: format!("h {:?}, gamma {:?}, beta {:?}", g.shape(h), g.shape(gamma), g.shape(beta)),
        });
    }
    let s = g.mul(gamma, h)?;
    g.add(s, beta)
}

/// Per-frame `(γ, β)` from cross-attention of frame hiddens over the prompt.
///
/// `γ = 1 + δ`; the projection starts at zero so modulation starts as identity.
/// Returns `(gamma, beta, attention node)`.
pub fn film_params(
    ctx: &mut Ctx,
    name: &str,
    h: Var,
    prompt: Var,
    dim: usize,
    prompt_dim: usize,
    heads: usize,
) -> Result<(Var, Var, Var)> {
    let q = linear(ctx, &format!("{name}.q"), h, dim, dim)?;
    let k = linear(ctx, &format!("{name}.k"), prompt, prompt_dim, dim)?;
    let v = linear(ctx, &format!("{name}.v"), prompt, prompt_dim, dim)?;
    let att = ctx.g.attention(q, k, v, heads, AttnMask::None)?;
    let o = linear(ctx, &format!("{name}.o"), att, dim, dim)?;
    let gb = linear_const(ctx, &format!("{name}.head"), o, dim, 2 * dim, Init::Zeros, Init::Zeros)?;
    let (delta, beta) = layers::split_halves(ctx, gb, dim)?;
    let gamma = ctx.g.add_scalar(delta, 1.0)?;
    Ok((gamma, beta, att))
}

/// Generator stack: transformer blocks, each followed by prompt FiLM unless disabled.
pub fn generator(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    name: &str,
    input: Var,
    prompt: Option<Var>,
) -> Result<Var> {
    let c = &cfg.generator;
    let frames = ctx.g.shape(input)[0];
    let mut x = add_positions(ctx, input, frames, c.hidden)?;
    let shape = BlockShape { dim: c.hidden, ff: c.ff, heads: c.heads, kernel: c.kernel };
    for l in 0..c.layers {
        x = fft_block(ctx, &format!("{name}.b{l}"), x, shape, AttnMask::None)?;
        if let (false, Some(r)) = (cfg.ablation.no_film, prompt) {
            let (gamma, beta, _) = film_params(
                ctx,
                &format!("{name}.film{l}"),
                x,
                r,
                c.hidden,
                cfg.prompt_encoder.hidden,
                c.heads,
            )?;
            x = film_modulate(&mut ctx.g, x, gamma, beta)?;
        }
    }
    layer_norm(ctx, &format!("{name}.ln"), x, c.hidden)
}

/// Unit embedding lookup mapped into generator width.
pub fn unit_embedding(ctx: &mut Ctx, cfg: &ModelConfig, table: &str, codebook: usize, units: &[usize]) -> Result<Var> {
    let hp = cfg.prosody.hidden;
    let t = ctx.param(table, &[codebook, hp], Init::Normal(0.3))?;
    let e = ctx.g.embedding(t, units)?;
    if hp == cfg.generator.hidden {
        Ok(e)
    } else {
        linear(ctx, &format!("gen.proj_{}", table.replace('.', "_")), e, hp, cfg.generator.hidden)
    }
}

/// Inputs for the generators, upsampled to frame rate.
pub struct GeneratorInputs {
    pub phonemes: Var,
    pub pitch: Var,
    pub energy: Var,
    pub frames: usize,
}

pub fn upsample_inputs(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    text_hidden: Var,
    pitch_units: &[usize],
    energy_units: &[usize],
    durations: &[usize],
) -> Result<GeneratorInputs> {
    let sigma = cfg.generator.upsample_sigma;
    let mut x = text_hidden;
    if cfg.text_encoder.hidden != cfg.generator.hidden {
        x = linear(ctx, "gen.text_proj", x, cfg.text_encoder.hidden, cfg.generator.hidden)?;
    }
    let p = unit_embedding(ctx, cfg, "prosody.emb_p", cfg.prosody.pitch_codebook, pitch_units)?;
    let e = unit_embedding(ctx, cfg, "prosody.emb_e", cfg.prosody.energy_codebook, energy_units)?;
    Ok(GeneratorInputs {
        phonemes: gaussian_upsample(&mut ctx.g, x, durations, sigma)?,
        pitch: gaussian_upsample(&mut ctx.g, p, durations, sigma)?,
        energy: gaussian_upsample(&mut ctx.g, e, durations, sigma)?,
        frames: durations.iter().sum(),
    })
}

pub fn filter_generator(ctx: &mut Ctx, cfg: &ModelConfig, inp: &GeneratorInputs, prompt: Var) -> Result<Representation> {
    let x = ctx.g.add(inp.phonemes, inp.energy)?;
    let var = generator(ctx, cfg, "filter", x, Some(prompt))?;
    Ok(Representation { kind: RepKind::Filter, var, frames: inp.frames })
}

pub fn source_generator(ctx: &mut Ctx, cfg: &ModelConfig, inp: &GeneratorInputs, prompt: Var) -> Result<Representation> {
    let x = ctx.g.add(inp.pitch, inp.energy)?;
    let var = generator(ctx, cfg, "source", x, Some(prompt))?;
    Ok(Representation { kind: RepKind::Source, var, frames: inp.frames })
}

/// Single generator used when the source/filter split is ablated.
pub fn joint_generator(ctx: &mut Ctx, cfg: &ModelConfig, inp: &GeneratorInputs, prompt: Var) -> Result<Representation> {
    let x = ctx.g.add(inp.phonemes, inp.pitch)?;
    let x = ctx.g.add(x, inp.energy)?;
    let var = generator(ctx, cfg, "joint", x, Some(prompt))?;
    Ok(Representation { kind: RepKind::Coarse, var, frames: inp.frames })
}

/// Coarse representation: sum in hidden (log-spectral) space, then a projection.
pub fn fuse(ctx: &mut Ctx, cfg: &ModelConfig, filter: Var, source: Var) -> Result<Var> {
    if ctx.g.shape(filter) != ctx.g.shape(source) {
        return Err(Error::Tensor(TensorError::Shape {
            op: "fuse",
            detail: format!("{:?} vs {:?}", ctx.g.shape(filter), ctx.g.shape(source)),
        }));
    }
    let s = ctx.g.add(filter, source)?;
    project_coarse(ctx, cfg, s)
}

pub fn project_coarse(ctx: &mut Ctx, cfg: &ModelConfig, x: Var) -> Result<Var> {
    linear(ctx, "fuse.proj", x, cfg.generator.hidden, cfg.decoder.hidden)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_fills_every_frame() {
        let mut g = Graph::<f64>::new();
        let tok = g.constant(Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = gaussian_upsample(&mut g, tok, &[5], 1.0).unwrap();
        assert_eq!(g.shape(y), &[5, 3]);
        for t in 0..5 {
            assert_eq!(g.value(y).row(t), &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn upsample_weights_rows_sum_to_one() {
        let w = gaussian_weights(&[2, 1], 1.0).unwrap();
        assert_eq!(w.len(), 3 * 2);
        for t in 0..3 {
            assert!((w[t * 2] + w[t * 2 + 1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_weights_symmetry() {
        // centres 1 and 3; frame 2 sits at 2.5, frame 1 at 1.5
        let w = gaussian_weights(&[2, 2], 1.0).unwrap();
        assert!(w[2 * 2 + 1] > w[2 * 2]);
        assert!((w[2 * 2] - w[1 * 2 + 1]).abs() < 1e-15);
        assert!((w[2 * 2 + 1] - w[1 * 2]).abs() < 1e-15);
        // closed form: softmax(-(0.25)/2, -(2.25)/2)
        let (a, b) = ((-1.5f64 * 1.5 / 2.0).exp(), (-0.5f64 * 0.5 / 2.0).exp());
        assert!((w[2 * 2 + 1] - b / (a + b)).abs() < 1e-15);
    }

    #[test]
    fn zero_duration_rejected() {
        assert!(gaussian_weights(&[2, 0], 1.0).is_err());
    }

    #[test]
    fn film_arithmetic() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::full(&[2, 2], 0.5));
        let ga = g.constant(Tensor::full(&[2, 2], 2.0));
        let be = g.constant(Tensor::full(&[2, 2], 1.0));
        let y = film_modulate(&mut g, h, ga, be).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));
        let zero = g.constant(Tensor::zeros(&[2, 2]));
        let y = film_modulate(&mut g, h, zero, be).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 1.0));
        let bad = g.constant(Tensor::zeros(&[2, 3]));
        assert!(film_modulate(&mut g, h, bad, be).is_err());
    }
}
