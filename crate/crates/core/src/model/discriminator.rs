//! Multi-window 2-D patch discriminator.
//!
//! For each window length a separate convolutional stack scores a random
//! time crop of the mel-spectrogram, treated as a one-channel image of
//! `n_mels × window` pixels.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{SeededRng, Var};

use super::params::{Ctx, Init};

pub const LEAKY_SLOPE: f64 = 0.2;

/// `(channels in, channels out, stride)` for each layer of one window's stack.
pub fn layer_plan(cfg: &ModelConfig) -> Vec<(usize, usize, usize)> {
    let h = cfg.discriminator.hidden;
    vec![(1, h, 1), (h, h, 2), (h, h, 2), (h, 1, 1)]
}

/// Spatial extent of one axis after a convolution.
pub fn conv_out(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - kernel) / stride + 1
}

/// Score-map shape `[1, H', W']` for a window.
pub fn score_shape(cfg: &ModelConfig, window: usize) -> [usize; 3] {
    let k = cfg.discriminator.conv_size;
    let pad = (k - 1) / 2;
    let (mut h, mut w) = (cfg.n_mels, window);
    for (_, _, s) in layer_plan(cfg) {
        h = conv_out(h, k, s, pad);
        w = conv_out(w, k, s, pad);
    }
    [1, h, w]
}

/// Crop start for a window; `None` when the mel is shorter than the window.
pub fn crop_start(frames: usize, window: usize, rng: &mut SeededRng) -> Option<usize> {
    (frames >= window).then(|| rng.range_inclusive(0, frames - window))
}

/// Scores `mel[start..start+window]` (`mel: [T, n_mels]`).
pub fn discriminate(ctx: &mut Ctx, cfg: &ModelConfig, mel: Var, window: usize, start: usize) -> Result<Var> {
    let k = cfg.discriminator.conv_size;
    let pad = (k - 1) / 2;
    let crop = ctx.g.slice(mel, 0, start, start + window)?;
    let img = ctx.g.transpose(crop)?;
    let mut x = ctx.g.reshape(img, &[1, cfg.n_mels, window])?;
    let plan = layer_plan(cfg);
    let last = plan.len() - 1;
    for (l, &(cin, cout, stride)) in plan.iter().enumerate() {
        let name = format!("disc.w{window}.c{l}");
        let std = 1.0 / ((cin * k * k) as f32).sqrt();
        let w = ctx.param(&format!("{name}.w"), &[cout, cin, k, k], Init::Normal(std))?;
        let b = ctx.param(&format!("{name}.b"), &[cout, 1, 1], Init::Zeros)?;
        x = ctx.g.conv2d(x, w, stride, pad)?;
        x = ctx.g.add(x, b)?;
        if l != last {
            x = ctx.g.leaky_relu(x, LEAKY_SLOPE)?;
        }
    }
    Ok(x)
}
