//! Autoregressive prosody predictor over duration, pitch and energy units.
//!
//! The encoded phonemes and prompt form a prefix that attends to itself
//! freely; unit steps follow and attend causally. Step `t` is fed the summed
//! embeddings of the units at step `t - 1` (a learned begin token at `t = 0`)
//! and predicts the three units of step `t` with independent heads.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{AcousticUnitSequence, Stream};
use crate::numerics::{AttnMask, SeededRng, Tensor, Var};

use super::layers::{fft_block, layer_norm, linear, sinusoid, BlockShape};
use super::params::{Ctx, Init, ParamStore};

/// Encoded phonemes `x` and prompt hiddens `r_p` in prosody-model width.
#[derive(Clone, Copy, Debug)]
pub struct ProsodyPrefix {
    pub phonemes: Var,
    pub n_phonemes: usize,
    pub prompt: Var,
    pub prompt_frames: usize,
}

impl ProsodyPrefix {
    pub fn len(&self) -> usize {
        self.n_phonemes + self.prompt_frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-step logits `[S, K]` for each stream.
#[derive(Clone, Copy, Debug)]
pub struct StreamLogits {
    pub duration: Var,
    pub pitch: Var,
    pub energy: Var,
}

impl StreamLogits {
    pub fn get(&self, s: Stream) -> Var {
        match s {
            Stream::Duration => self.duration,
            Stream::Pitch => self.pitch,
            Stream::Energy => self.energy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature(f64),
}

pub const EMB_D: &str = "prosody.emb_d";
pub const EMB_P: &str = "prosody.emb_p";
pub const EMB_E: &str = "prosody.emb_e";

const SEG_PHONEME: usize = 0;
const SEG_PROMPT: usize = 1;
const SEG_STEP: usize = 2;

fn codebooks(cfg: &ModelConfig) -> [usize; 3] {
    let p = &cfg.prosody;
    [p.duration_codebook, p.pitch_codebook, p.energy_codebook]
}

/// Projects the text and prompt encodings into the prosody model's width.
pub fn make_prefix(ctx: &mut Ctx, cfg: &ModelConfig, text_hidden: Var, prompt_hidden: Var) -> Result<ProsodyPrefix> {
    let hp = cfg.prosody.hidden;
    let n = ctx.g.shape(text_hidden)[0];
    let r = ctx.g.shape(prompt_hidden)[0];
    if r == 0 {
        return Err(Error::Data("empty prosody prompt".into()));
    }
    let phonemes = linear(ctx, "prosody.in_x", text_hidden, cfg.text_encoder.hidden, hp)?;
    let prompt = linear(ctx, "prosody.in_r", prompt_hidden, cfg.prompt_encoder.hidden, hp)?;
    Ok(ProsodyPrefix { phonemes, n_phonemes: n, prompt, prompt_frames: r })
}

fn check_units(cfg: &ModelConfig, history: &[[usize; 3]]) -> Result<()> {
    let cb = codebooks(cfg);
    for (t, step) in history.iter().enumerate() {
        for (s, (&u, &k)) in step.iter().zip(&cb).enumerate() {
            if u >= k {
                return Err(Error::Data(format!(
                    "history step {t}: {} unit {u} outside codebook of {k}",
                    Stream::ALL[s].name()
                )));
            }
        }
    }
    Ok(())
}

/// Logits for the first `history.len() + 1` steps given the units of the
/// preceding steps.
pub fn forward(ctx: &mut Ctx, cfg: &ModelConfig, prefix: &ProsodyPrefix, history: &[[usize; 3]]) -> Result<StreamLogits> {
    let c = &cfg.prosody;
    let hp = c.hidden;
    let n = prefix.n_phonemes;
    let steps = history.len() + 1;
    if steps > n {
        return Err(Error::Data(format!("history of {} steps for {} phonemes", history.len(), n)));
    }
    if n > c.max_phonemes {
        return Err(Error::Data(format!("{n} phonemes exceed the limit of {}", c.max_phonemes)));
    }
    check_units(cfg, history)?;
    let cb = codebooks(cfg);

    let pos_table = ctx.param("prosody.pos", &[c.max_phonemes, hp], Init::Normal(0.1))?;
    let seg = ctx.param("prosody.seg", &[3, hp], Init::Normal(0.1))?;
    let idx: Vec<usize> = (0..n).collect();
    let pos_x = ctx.g.embedding(pos_table, &idx)?;
    let seg_x = ctx.g.embedding(seg, &vec![SEG_PHONEME; n])?;
    let x = ctx.g.add(prefix.phonemes, pos_x)?;
    let x = ctx.g.add(x, seg_x)?;

    let pos_r = ctx.input(sinusoid(prefix.prompt_frames, hp, 0));
    let seg_r = ctx.g.embedding(seg, &vec![SEG_PROMPT; prefix.prompt_frames])?;
    let r = ctx.g.add(prefix.prompt, pos_r)?;
    let r = ctx.g.add(r, seg_r)?;

    let bos = ctx.param("prosody.bos", &[1, hp], Init::Normal(0.1))?;
    let mut step_in = bos;
    if !history.is_empty() {
        let mut sum = None;
        for (s, name) in [EMB_D, EMB_P, EMB_E].iter().enumerate() {
            let table = ctx.param(name, &[cb[s], hp], Init::Normal(0.3))?;
            let ids: Vec<usize> = history.iter().map(|h| h[s]).collect();
            let e = ctx.g.embedding(table, &ids)?;
            sum = Some(match sum {
                None => e,
                Some(acc) => ctx.g.add(acc, e)?,
            });
        }
        step_in = ctx.g.concat(&[bos, sum.unwrap()], 0)?;
    }
    let step_pos = ctx.g.embedding(pos_table, &(0..steps).collect::<Vec<_>>())?;
    let step_seg = ctx.g.embedding(seg, &vec![SEG_STEP; steps])?;
    let s = ctx.g.add(step_in, step_pos)?;
    let s = ctx.g.add(s, step_seg)?;

    let plen = prefix.len();
    let mut h = ctx.g.concat(&[x, r, s], 0)?;
    let shape = BlockShape { dim: hp, ff: c.ff, heads: c.heads, kernel: 1 };
    for l in 0..c.layers {
        h = fft_block(ctx, &format!("prosody.b{l}"), h, shape, AttnMask::PrefixCausal(plen))?;
    }
    let h = layer_norm(ctx, "prosody.ln", h, hp)?;
    let h = ctx.g.slice(h, 0, plen, plen + steps)?;
    Ok(StreamLogits {
        duration: linear(ctx, "prosody.head_d", h, hp, cb[0])?,
        pitch: linear(ctx, "prosody.head_p", h, hp, cb[1])?,
        energy: linear(ctx, "prosody.head_e", h, hp, cb[2])?,
    })
}

/// Teacher-forced logits for every step of `targets`.
pub fn teacher_forced(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    prefix: &ProsodyPrefix,
    targets: &AcousticUnitSequence,
) -> Result<StreamLogits> {
    if targets.len() != prefix.n_phonemes {
        return Err(Error::Data(format!("{} unit steps for {} phonemes", targets.len(), prefix.n_phonemes)));
    }
    let hist: Vec<[usize; 3]> = (0..targets.len() - 1).map(|t| targets.step(t)).collect();
    forward(ctx, cfg, prefix, &hist)
}

/// Logit rows `(duration, pitch, energy)` for the step after `history`.
pub fn step_logits(
    ctx: &mut Ctx,
    cfg: &ModelConfig,
    prefix: &ProsodyPrefix,
    history: &[[usize; 3]],
) -> Result<[Vec<f32>; 3]> {
    let l = forward(ctx, cfg, prefix, history)?;
    let t = history.len();
    Ok([l.duration, l.pitch, l.energy].map(|v| ctx.g.value(v).row(t).to_vec()))
}

fn pick_unit(logits: &[f32], sampling: Sampling, rng: &mut SeededRng) -> usize {
    let argmax = || {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    };
    match sampling {
        Sampling::Temperature(tau) if tau > 1e-6 => {
            let mx = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let w: Vec<f64> = logits.iter().map(|&v| ((v as f64 - mx) / tau).exp()).collect();
            rng.categorical(&w)
        }
        _ => argmax(),
    }
}

/// Decodes one unit triple per phoneme from the encoded text `[N, H]` and
/// prompt `[R, H]`; each stream is drawn independently.
pub fn decode(
    params: &ParamStore,
    cfg: &ModelConfig,
    text_hidden: &Tensor<f32>,
    prompt_hidden: &Tensor<f32>,
    sampling: Sampling,
    seed: u64,
) -> Result<AcousticUnitSequence> {
    let n = text_hidden.shape()[0];
    if n == 0 {
        return Err(Error::Data("empty phoneme sequence".into()));
    }
    let mut rng = SeededRng::derived(seed, "prosody.decode");
    let mut hist: Vec<[usize; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ctx = Ctx::new(params, false);
        let x = ctx.input(text_hidden.clone());
        let r = ctx.input(prompt_hidden.clone());
        let prefix = make_prefix(&mut ctx, cfg, x, r)?;
        let rows = step_logits(&mut ctx, cfg, &prefix, &hist)?;
        hist.push(rows.map(|row| pick_unit(&row, sampling, &mut rng)));
    }
    let col = |s: usize| hist.iter().map(|h| h[s]).collect::<Vec<_>>();
    AcousticUnitSequence::new(col(0), col(1), col(2))
}

/// Sum over streams of the mean cross-entropy over steps.
pub fn ce_loss(ctx: &mut Ctx, logits: &StreamLogits, targets: &AcousticUnitSequence) -> Result<(Var, [Var; 3])> {
    let mut parts = [logits.duration; 3];
    for (i, s) in Stream::ALL.iter().enumerate() {
        let l = logits.get(*s);
        let rows = ctx.g.shape(l)[0];
        if rows != targets.len() {
            return Err(Error::Data(format!("{rows} logit rows for {} targets", targets.len())));
        }
        let lp = ctx.g.log_softmax(l, 1)?;
        let picked = ctx.g.pick(lp, targets.stream(*s))?;
        let m = ctx.g.mean(picked)?;
        parts[i] = ctx.g.scale(m, -1.0)?;
    }
    let a = ctx.g.add(parts[0], parts[1])?;
    let total = ctx.g.add(a, parts[2])?;
    Ok((total, parts))
}

/// Log-probability of a unit row under a logit row, in double precision.
pub fn log_prob(logits: &[f32], unit: usize) -> f64 {
    let mx = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let z: f64 = logits.iter().map(|&v| (v as f64 - mx).exp()).sum();
    logits[unit] as f64 - mx - z.ln()
}

/// Teacher-forced `log p(c_1..c_N | x, r)`.
pub fn sequence_log_prob(ctx: &Ctx, logits: &StreamLogits, targets: &AcousticUnitSequence) -> f64 {
    let mut total = 0.0;
    for s in Stream::ALL {
        let v = ctx.g.value(logits.get(s));
        for (t, &u) in targets.stream(s).iter().enumerate() {
            total += log_prob(v.row(t), u);
        }
    }
    total
}
