//! Objective metrics over F0 contours, durations and style embeddings.

use crate::error::{Error, Result};

/// Voiced values (`> 0`) of a contour.
pub fn voiced(contour: &[f64]) -> Vec<f64> {
    contour.iter().copied().filter(|&f| f > 0.0).collect()
}

/// Linear resampling of `x` to `n` points; endpoints map to endpoints.
pub fn resample_linear(x: &[f64], n: usize) -> Vec<f64> {
    if n == 0 || x.is_empty() {
        return Vec::new();
    }
    if x.len() == 1 || n == 1 {
        return vec![x[0]; n];
    }
    let scale = (x.len() - 1) as f64 / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let pos = i as f64 * scale;
            let j = (pos.floor() as usize).min(x.len() - 2);
            let f = pos - j as f64;
            x[j] * (1.0 - f) + x[j + 1] * f
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let tiny = |m: f64| 1e-18 * n * m.abs().max(1.0).powi(2);
    if saa <= tiny(ma) || sbb <= tiny(mb) {
        return Err(Error::Data("F0 PCC undefined for a constant contour".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the voiced frames of two contours, both resampled
/// to the shorter voiced length.
pub fn f0_pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    let (va, vb) = (voiced(a), voiced(b));
    let n = va.len().min(vb.len());
    if n < 2 {
        return Err(Error::Data(format!("F0 PCC needs 2 voiced frames, got {} and {}", va.len(), vb.len())));
    }
    pearson(&resample_linear(&va, n), &resample_linear(&vb, n))
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    // rounding leaves a tiny spread on constant input
    let flat = sd <= 1e-9 * m.abs().max(1.0);
    x.iter().map(|v| if flat { 0.0 } else { (v - m) / sd }).collect()
}

/// DTW over mean-variance normalised voiced contours with moves
/// (1,0), (0,1), (1,1); returns the mean local cost along the optimal path.
pub fn f0_dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    let (va, vb) = (voiced(a), voiced(b));
    if va.is_empty() || vb.is_empty() {
        return Err(Error::Data("F0 DTW needs non-empty voiced contours".into()));
    }
    Ok(dtw_mean_cost(&standardize(&va), &standardize(&vb)))
}

/// Minimum-total-cost path; ties in total cost prefer the shorter path.
pub fn dtw_mean_cost(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let inf = (f64::INFINITY, usize::MAX);
    let mut d = vec![inf; (n + 1) * (m + 1)];
    d[0] = (0.0, 0);
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            let c = (a[i - 1] - b[j - 1]).abs();
            let best = [d[at(i - 1, j)], d[at(i, j - 1)], d[at(i - 1, j - 1)]]
                .into_iter()
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .unwrap();
            d[at(i, j)] = (best.0 + c, best.1 + 1);
        }
    }
    let (cost, len) = d[at(n, m)];
    cost / len as f64
}

/// Root mean squared frame difference between per-phoneme durations.
pub fn duration_rmse(pred: &[usize], reference: &[usize]) -> Result<f64> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Data(format!("duration RMSE over {} vs {} phonemes", pred.len(), reference.len())));
    }
    let ss: f64 = pred.iter().zip(reference).map(|(&p, &r)| (p as f64 - r as f64).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Data(format!("cosine over {} vs {} dims", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Data("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Source of utterance-level style embeddings for the similarity metric.
pub trait StyleEmbedder {
    fn embed(&self, mel: &crate::features::MelSpectrogram) -> Result<Vec<f32>>;
}

impl StyleEmbedder for crate::model::Model {
    fn embed(&self, mel: &crate::features::MelSpectrogram) -> Result<Vec<f32>> {
        crate::tasks::style_embedding(self, mel)
    }
}

pub fn embed_similarity(
    embedder: &dyn StyleEmbedder,
    a: &crate::features::MelSpectrogram,
    b: &crate::features::MelSpectrogram,
) -> Result<f64> {
    cosine(&embedder.embed(a)?, &embedder.embed(b)?)
}

/// One CSV row: request id, metric name, value.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub metric: String,
    pub value: f64,
}

pub const METRIC_HEADER: &str = "id,metric,value";

pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRIC_HEADER);
    s.push('\n');
    for r in rows {
        s += &format!("{},{},{:.6}\n", r.id, r.metric, r.value);
    }
    s
}
