//! NOAM schedule and AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::numerics::Tensor;

use crate::model::ParamStore;

/// `scale · min(step^−½, step · warmup^−³⁄₂)`, `step ≥ 1`.
pub fn noam_lr(step: u64, warmup: u64, scale: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    scale * s.powf(-0.5).min(s * w.powf(-1.5))
}

/// Rate of the prosody-predictor group: the peak rate until warmup ends.
pub fn prosody_lr(step: u64, warmup: u64, scale: f64) -> f64 {
    if step < warmup {
        noam_lr(warmup, warmup, scale)
    } else {
        noam_lr(step, warmup, scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW { beta1, beta2, eps, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update; `lr_of` gives the rate per parameter name. Parameters
    /// without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor<f32>>, lr_of: impl Fn(&str) -> f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let lr = lr_of(name);
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i] as f64;
                let mi = b1 * md[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * vd[i] as f64 + (1.0 - b2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let upd = (mi / c1) / ((vi / c2).sqrt() + self.eps) + self.weight_decay * pd[i] as f64;
                pd[i] = (pd[i] as f64 - lr * upd) as f32;
            }
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.data().iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / (norm + 1e-12)) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
