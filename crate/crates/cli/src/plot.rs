use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use promptts_core::features::MelSpectrogram;

const PX: u32 = 3;

fn colormap(x: f64) -> Rgb<u8> {
    let x = x.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * x - 0.25).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.8 * x - 0.6).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (0.4 + 0.6 * (1.0 - (2.0 * x - 0.8).abs())).clamp(0.0, 1.0) * (1.0 - 0.7 * x)) as u8;
    Rgb([r, g, b])
}

/// Mel heatmap, low bands at the bottom.
pub fn mel_png(mel: &MelSpectrogram, path: &Path) -> Result<()> {
    let bands = mel.data().len() / mel.frames().max(1);
    let (lo, hi) = mel
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6) as f64;
    let (w, h) = (mel.frames().max(1) as u32 * PX, bands as u32 * PX);
    let mut img = RgbImage::new(w, h);
    for t in 0..mel.frames() {
        let frame = mel.frame(t);
        for (b, &v) in frame.iter().enumerate() {
            let c = colormap((v - lo) as f64 / span);
            for dx in 0..PX {
                for dy in 0..PX {
                    img.put_pixel(t as u32 * PX + dx, h - 1 - (b as u32 * PX + dy), c);
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Line plots of several contours on shared axes; values `<= 0` are gaps
/// when `gaps` is set.
pub fn contour_png(series: &[&[f64]], gaps: bool, path: &Path) -> Result<()> {
    let (w, h, m) = (640u32, 240u32, 10u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let keep = |v: f64| v.is_finite() && (!gaps || v > 0.0);
    let vals: Vec<f64> = series.iter().flat_map(|s| s.iter().copied()).filter(|&v| keep(v)).collect();
    let n = series.iter().map(|s| s.len()).max().unwrap_or(0);
    if !vals.is_empty() && n > 1 {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        let colors = [Rgb([20, 20, 160]), Rgb([200, 40, 40]), Rgb([30, 140, 30]), Rgb([120, 60, 160])];
        let to_px = |i: usize, v: f64| {
            let x = m as f64 + (w - 2 * m) as f64 * i as f64 / (n - 1) as f64;
            let y = (h - m) as f64 - (h - 2 * m) as f64 * (v - lo) / span;
            (x, y)
        };
        for (k, s) in series.iter().enumerate() {
            let c = colors[k % colors.len()];
            for i in 1..s.len() {
                if !keep(s[i - 1]) || !keep(s[i]) {
                    continue;
                }
                let (a, b) = (to_px(i - 1, s[i - 1]), to_px(i, s[i]));
                let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
                for j in 0..=steps {
                    let f = j as f64 / steps as f64;
                    let (x, y) = (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
                    img.put_pixel((x as u32).min(w - 1), (y as u32).min(h - 1), c);
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
