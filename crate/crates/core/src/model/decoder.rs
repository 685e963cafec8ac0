//! Acoustic decoder with sample-adaptive kernel selection.
//!
//! A mapping network turns `(r_g, z)` into a style vector `w`. Every
//! convolution in the decoder's feed-forward sublayers is built per sample:
//! a softmax over `w`-predicted logits mixes a bank of kernels, the mixed
//! kernel is scaled per input channel by an affine of `w` and then
//! demodulated to unit norm per output channel.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{AttnMask, Graph, Scalar, Tensor, TensorError, Var};

use super::layers::{self, layer_norm, linear, linear_const, mha};
use super::params::{Ctx, Init};

pub const DEMOD_EPS: f64 = 1e-8;

/// Style vector `w = MLP([r_g; z])`.
pub fn map_style(ctx: &mut Ctx, cfg: &ModelConfig, global_style: Var, noise: Var) -> Result<Var> {
    let a = &cfg.adaptive;
    let gs = ctx.g.reshape(global_style, &[1, a.global_style_dim])?;
    let z = ctx.g.reshape(noise, &[1, a.noise_dim])?;
    let mut x = ctx.g.concat(&[gs, z], 1)?;
    let mut din = a.global_style_dim + a.noise_dim;
    for l in 0..a.mapping_depth {
        x = linear(ctx, &format!("dec.map{l}"), x, din, a.mapped_style_dim)?;
        x = ctx.g.leaky_relu(x, 0.2)?;
        din = a.mapped_style_dim;
    }
    Ok(x)
}

/// `Σ_k α_k · bank_k` with `α = softmax(logits)`. `bank: [K, ...]`, `logits: [1, K]`.
pub fn aggregate_kernels<T: Scalar>(
    g: &mut Graph<T>,
    bank: Var,
    logits: Var,
) -> std::result::Result<(Var, Var), TensorError> {
    let shape = g.shape(bank).to_vec();
    let k = shape[0];
    if k == 0 || g.shape(logits) != [1, k] {
        return Err(TensorError::Shape {
            op: "aggregate_kernels",
            detail: format!("bank {:?}, logits {:?}", shape, g.shape(logits)),
        });
    }
    let alpha = g.softmax(logits, 1)?;
    let rest: usize = shape[1..].iter().product();
    let flat = g.reshape(bank, &[k, rest])?;
    let mixed = g.matmul(alpha, flat)?;
    Ok((g.reshape(mixed, &shape[1..])?, alpha))
}

/// `W' = s ⊙ W` per input channel, then `W'' = W' / sqrt(Σ W'² + ε)` per output channel.
///
/// `filter: [Cout, Cin, K]`, `scale: [Cin]`.
pub fn modulate_demodulate<T: Scalar>(
    g: &mut Graph<T>,
    filter: Var,
    scale: Var,
    eps: f64,
) -> std::result::Result<Var, TensorError> {
    let fs = g.shape(filter).to_vec();
    if fs.len() != 3 || g.value(scale).numel() != fs[1] {
        return Err(TensorError::Shape {
            op: "modulate_demodulate",
            detail: format!("filter {:?}, scale {:?}", fs, g.shape(scale)),
        });
    }
    let s = g.reshape(scale, &[1, fs[1], 1])?;
    let w1 = g.mul(filter, s)?;
    let sq = g.square(w1)?;
    let per_in = g.sum_axis(sq, 2)?;
    let per_out = g.sum_axis(per_in, 1)?;
    let shifted = g.add_scalar(per_out, T::lit(eps))?;
    let norm = g.sqrt(shifted)?;
    g.div(w1, norm)
}

/// Convolution whose kernel is selected and modulated by `w`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_conv(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    name: &str,
    x: Var,
    w: Var,
    cin: usize,
    cout: usize,
    kernel: usize,
) -> Result<Var> {
    let a = &cfg.adaptive;
    let std = 1.0 / ((cin * kernel) as f32).sqrt();
    let bank = ctx.param(&format!("{name}.bank"), &[a.bank_size, cout, cin, kernel], Init::Normal(std))?;
    let logits = linear_const(
        ctx,
        &format!("{name}.select"),
        w,
        a.mapped_style_dim,
        a.bank_size,
        Init::Normal(0.1),
        Init::Zeros,
    )?;
    let (filter, _) = aggregate_kernels(&mut ctx.g, bank, logits)?;
    let scale =
        linear_const(ctx, &format!("{name}.scale"), w, a.mapped_style_dim, cin, Init::Zeros, Init::Ones)?;
    let filt = modulate_demodulate(&mut ctx.g, filter, scale, DEMOD_EPS)?;
    let bias = ctx.param(&format!("{name}.bias"), &[cout], Init::Zeros)?;
    let y = ctx.g.conv1d(x, filt)?;
    Ok(ctx.g.add(y, bias)?)
}

/// Decodes the coarse representation `[T, H]` to a `[T, 80]` mel.
pub fn decode(ctx: &mut Ctx, cfg: &ModelConfig, coarse: Var, w: Option<Var>) -> Result<Var> {
    let c = &cfg.decoder;
    let mut x = coarse;
    for l in 0..c.layers {
        let name = format!("dec.b{l}");
        let h = layer_norm(ctx, &format!("{name}.ln1"), x, c.hidden)?;
        let att = mha(ctx, &format!("{name}.attn"), h, h, c.hidden, c.hidden, c.hidden, c.heads, AttnMask::None)?;
        x = ctx.g.add(x, att)?;
        let h = layer_norm(ctx, &format!("{name}.ln2"), x, c.hidden)?;
        let f = match (cfg.ablation.no_adaptive_kernels, w) {
            (false, Some(w)) => {
                let f = adaptive_conv(ctx, cfg, &format!("{name}.ac1"), h, w, c.hidden, c.ff, c.kernel)?;
                let f = ctx.g.relu(f)?;
                adaptive_conv(ctx, cfg, &format!("{name}.ac2"), f, w, c.ff, c.hidden, c.kernel)?
            }
            _ => layers::conv_ffn(ctx, &format!("{name}.ffn"), h, c.hidden, c.ff, c.kernel)?,
        };
        x = ctx.g.add(x, f)?;
    }
    let x = layer_norm(ctx, "dec.ln", x, c.hidden)?;
    linear(ctx, "dec.out", x, c.hidden, cfg.n_mels)
}

/// Parameter scalars the adaptive decoder adds over plain convolutions.
pub fn adaptive_param_delta(cfg: &ModelConfig) -> usize {
    let a = &cfg.adaptive;
    let c = &cfg.decoder;
    let mut mapping = 0;
    let mut din = a.global_style_dim + a.noise_dim;
    for _ in 0..a.mapping_depth {
        mapping += din * a.mapped_style_dim + a.mapped_style_dim;
        din = a.mapped_style_dim;
    }
    let layer = |cin: usize, cout: usize| {
        let kernel = cout * cin * c.kernel;
        (a.bank_size - 1) * kernel + (a.mapped_style_dim * a.bank_size + a.bank_size) + (a.mapped_style_dim * cin + cin)
    };
    mapping + c.layers * (layer(c.hidden, c.ff) + layer(c.ff, c.hidden))
}

/// Noise vector `z ~ N(0, I)`.
pub fn sample_noise(rng: &mut crate::numerics::SeededRng, dim: usize) -> Tensor<f32> {
    Tensor::from_fn(&[dim], |_| rng.normal() as f32)
}
