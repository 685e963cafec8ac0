//! Shared building blocks: linear maps, layer norm, attention and the
//! convolutional feed-forward transformer block.

use crate::error::Result;
use crate::numerics::{AttnMask, Tensor, Var};

use super::params::{Ctx, Init};

pub const LN_EPS: f64 = 1e-5;

fn fan_in_std(fan_in: usize) -> f32 {
    1.0 / (fan_in.max(1) as f32).sqrt()
}

pub fn linear(ctx: &mut Ctx, name: &str, x: Var, din: usize, dout: usize) -> Result<Var> {
    let w = ctx.param(&format!("{name}.w"), &[din, dout], Init::Normal(fan_in_std(din)))?;
    let b = ctx.param(&format!("{name}.b"), &[dout], Init::Zeros)?;
    let y = ctx.g.matmul(x, w)?;
    Ok(ctx.g.add(y, b)?)
}

/// Linear map whose weight and bias start at the given constants.
pub fn linear_const(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    din: usize,
    dout: usize,
    w_init: Init,
    b_init: Init,
) -> Result<Var> {
    let w = ctx.param(&format!("{name}.w"), &[din, dout], w_init)?;
    let b = ctx.param(&format!("{name}.b"), &[dout], b_init)?;
    let y = ctx.g.matmul(x, w)?;
    Ok(ctx.g.add(y, b)?)
}

pub fn layer_norm(ctx: &mut Ctx, name: &str, x: Var, dim: usize) -> Result<Var> {
    let g = ctx.param(&format!("{name}.g"), &[dim], Init::Ones)?;
    let b = ctx.param(&format!("{name}.b"), &[dim], Init::Zeros)?;
    Ok(ctx.g.layer_norm(x, g, b, LN_EPS)?)
}

/// Multi-head attention with input/output projections.
#[allow(clippy::too_many_arguments)]
pub fn mha(
    ctx: &mut Ctx,
    name: &str,
    xq: Var,
    xkv: Var,
    dq: usize,
    dkv: usize,
    dim: usize,
    heads: usize,
    mask: AttnMask,
) -> Result<Var> {
    let q = linear(ctx, &format!("{name}.q"), xq, dq, dim)?;
    let k = linear(ctx, &format!("{name}.k"), xkv, dkv, dim)?;
    let v = linear(ctx, &format!("{name}.v"), xkv, dkv, dim)?;
    let a = ctx.g.attention(q, k, v, heads, mask)?;
    linear(ctx, &format!("{name}.o"), a, dim, dim)
}

pub fn conv1d(ctx: &mut Ctx, name: &str, x: Var, cin: usize, cout: usize, kernel: usize) -> Result<Var> {
    let w = ctx.param(&format!("{name}.w"), &[cout, cin, kernel], Init::Normal(fan_in_std(cin * kernel)))?;
    let b = ctx.param(&format!("{name}.b"), &[cout], Init::Zeros)?;
    let y = ctx.g.conv1d(x, w)?;
    Ok(ctx.g.add(y, b)?)
}

/// Conv → ReLU → conv feed-forward sublayer.
pub fn conv_ffn(ctx: &mut Ctx, name: &str, x: Var, dim: usize, ff: usize, kernel: usize) -> Result<Var> {
    let h = conv1d(ctx, &format!("{name}.c1"), x, dim, ff, kernel)?;
    let h = ctx.g.relu(h)?;
    conv1d(ctx, &format!("{name}.c2"), h, ff, dim, kernel)
}

#[derive(Clone, Copy, Debug)]
pub struct BlockShape {
    pub dim: usize,
    pub ff: usize,
    pub heads: usize,
    pub kernel: usize,
}

/// Pre-norm transformer block with a convolutional feed-forward sublayer.
pub fn fft_block(ctx: &mut Ctx, name: &str, x: Var, s: BlockShape, mask: AttnMask) -> Result<Var> {
    let h = layer_norm(ctx, &format!("{name}.ln1"), x, s.dim)?;
    let a = mha(ctx, &format!("{name}.attn"), h, h, s.dim, s.dim, s.dim, s.heads, mask)?;
    let x = ctx.g.add(x, a)?;
    let h = layer_norm(ctx, &format!("{name}.ln2"), x, s.dim)?;
    let f = conv_ffn(ctx, &format!("{name}.ffn"), h, s.dim, s.ff, s.kernel)?;
    Ok(ctx.g.add(x, f)?)
}

/// Sinusoidal position table, rows `offset..offset+len`.
pub fn sinusoid(len: usize, dim: usize, offset: usize) -> Tensor<f32> {
    Tensor::from_fn(&[len, dim], |i| {
        let (pos, j) = ((i / dim + offset) as f64, i % dim);
        let rate = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / dim as f64);
        let a = pos * rate;
        (if j % 2 == 0 { a.sin() } else { a.cos() }) as f32
    })
}

pub fn add_positions(ctx: &mut Ctx, x: Var, len: usize, dim: usize) -> Result<Var> {
    let pe = ctx.input(sinusoid(len, dim, 0));
    Ok(ctx.g.add(x, pe)?)
}

/// Splits `[T, 2C]` into its two `[T, C]` halves.
pub fn split_halves(ctx: &mut Ctx, x: Var, c: usize) -> Result<(Var, Var)> {
    let a = ctx.g.slice(x, 1, 0, c)?;
    let b = ctx.g.slice(x, 1, c, 2 * c)?;
    Ok((a, b))
}
