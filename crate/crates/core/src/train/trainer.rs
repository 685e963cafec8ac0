//! The training loop.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::corpus::{units_for, Corpus, Split};
use crate::error::{Error, Result};
use crate::features::{AcousticUnitSequence, MelSpectrogram, Stream};
use crate::model::decoder::sample_noise;
use crate::model::discriminator::{crop_start, discriminate};
use crate::model::{generator_pass, prosody, Ctx, GeneratorPass, Model, ParamStore};
use crate::numerics::{SeededRng, Tensor, Var};

use super::checkpoint::{save_checkpoint, TrainState};
use super::losses::{lsgan_d, lsgan_g, masked_l1};
use super::optim::{clip_grad_norm, noam_lr, prosody_lr};
use super::plan::{sample_prompt_plan, PromptPlan};

pub const LOSS_LOG: &str = "losses.csv";
pub const LOSS_HEADER: &str = "step,l1,ce_d,ce_p,ce_e,g_adv,d_loss,lr";
pub const LATEST: &str = "latest.ptck";

/// One training utterance with its ground-truth units.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub phoneme_ids: Vec<usize>,
    pub units: AcousticUnitSequence,
    pub mel: MelSpectrogram,
}

/// Training examples from `split`; utterances shorter than `min_frames` are skipped.
pub fn prepare_examples(corpus: &Corpus, state: &TrainState, split: Split) -> Result<Vec<Example>> {
    let stats = corpus.speaker_stats()?;
    let mut out = Vec::new();
    for u in corpus.split(split) {
        if u.frames() < state.run.train.min_frames {
            continue;
        }
        let st = stats
            .get(&u.speaker)
            .ok_or_else(|| Error::Data(format!("utterance {}: speaker {} has no voiced frames", u.id, u.speaker)))?;
        out.push(Example {
            id: u.id.clone(),
            phoneme_ids: state.model.phoneme_ids(&u.phonemes)?,
            units: units_for(u, st)?,
            mel: u.mel.clone(),
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no {split} utterance has at least {} frames", state.run.train.min_frames)));
    }
    Ok(out)
}

/// Batch-mean losses of one step. Adversarial entries are `None` before the
/// adversarial phase or when no window fits.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub l1: f64,
    pub ce: [f64; 3],
    pub g_adv: Option<f64>,
    pub d_loss: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
}

impl StepStats {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{},{:.6e}",
            self.step,
            self.l1,
            self.ce[0],
            self.ce[1],
            self.ce[2],
            opt(self.g_adv),
            opt(self.d_loss),
            self.lr
        )
    }
}

struct Sample<'a> {
    ctx: Ctx<'a>,
    pass: GeneratorPass,
    recon: Var,
    crops: Vec<(usize, usize)>,
    target: Tensor<f32>,
}

fn accumulate(into: &mut BTreeMap<String, Tensor<f32>>, grads: BTreeMap<String, Tensor<f32>>) {
    for (k, g) in grads {
        match into.get_mut(&k) {
            Some(acc) => acc.add_assign(&g),
            None => {
                into.insert(k, g);
            }
        }
    }
}

fn scale_all(grads: &mut BTreeMap<String, Tensor<f32>>, s: f32) {
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|x| *x *= s);
    }
}

fn numeric(step: u64, ids: &[&str], what: &str) -> Error {
    Error::Numeric(format!("step {step}: non-finite {what} for batch [{}]", ids.join(", ")))
}

fn mel_tensor(mel: &MelSpectrogram, n_mels: usize) -> Result<Tensor<f32>> {
    Ok(Tensor::new(&[mel.frames(), n_mels], mel.data().to_vec())?)
}

/// One optimisation step on a batch drawn with replacement from `examples`.
pub fn train_step(state: &mut TrainState, examples: &[Example]) -> Result<StepStats> {
    if examples.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let step = state.step + 1;
    let tc = state.run.train.clone();
    let cfg = state.run.model.clone();
    let lr = noam_lr(step, tc.warmup_steps, tc.lr_scale);
    let plr = prosody_lr(step, tc.warmup_steps, tc.lr_scale);
    let adversarial = step >= tc.adv_start_step && tc.lambda_adv > 0.0;

    let batch: Vec<&Example> =
        (0..tc.batch_size.max(1)).map(|_| &examples[state.rng.range_inclusive(0, examples.len() - 1)]).collect();
    let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
    let mut plans: Vec<PromptPlan> = Vec::with_capacity(batch.len());
    let mut noises = Vec::with_capacity(batch.len());
    let mut crops = Vec::with_capacity(batch.len());
    for ex in &batch {
        let plan = sample_prompt_plan(ex.mel.frames(), &tc, &mut state.rng)
            .ok_or_else(|| Error::Data(format!("utterance {} is too short to train on", ex.id)))?;
        plans.push(plan);
        noises.push(sample_noise(&mut state.rng, cfg.adaptive.noise_dim));
        let c: Vec<(usize, usize)> = if adversarial {
            cfg.discriminator
                .windows
                .iter()
                .filter_map(|&w| crop_start(ex.mel.frames(), w, &mut state.rng).map(|s| (w, s)))
                .collect()
        } else {
            Vec::new()
        };
        crops.push(c);
    }

    let mut d_store: ParamStore = state.model.params.split_prefix("disc.").0;
    let inv_b = 1.0 / batch.len() as f32;
    let mut l1_sum = 0.0;
    let mut ce_sum = [0.0; 3];

    let mut samples = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let mut ctx = Ctx::new(&state.model.params, true);
        ctx.g.set_check_finite(false);
        let sp = ex.mel.slice(plans[i].segment().start, plans[i].segment().end);
        let pp = ex.mel.slice(plans[i].prosody_segment().start, plans[i].prosody_segment().end);
        let pass = generator_pass(&mut ctx, &cfg, &ex.phoneme_ids, &ex.units, &sp, &pp, &noises[i])?;
        let target = mel_tensor(&ex.mel, cfg.n_mels)?;
        let l1 = masked_l1(&mut ctx.g, pass.mel, &target, &plans[i].mask)?;
        let (ce, parts) = prosody::ce_loss(&mut ctx, &pass.logits, &ex.units)?;
        l1_sum += ctx.g.value(l1).item() as f64;
        for (k, p) in parts.iter().enumerate() {
            ce_sum[k] += ctx.g.value(*p).item() as f64;
        }
        let recon = ctx.g.add(l1, ce)?;
        if !ctx.g.value(recon).is_finite() {
            return Err(numeric(step, &ids, "reconstruction loss"));
        }
        samples.push(Sample { ctx, pass, recon, crops: std::mem::take(&mut crops[i]), target });
    }

    let mut d_loss = None;
    if adversarial && samples.iter().any(|s| !s.crops.is_empty()) {
        let mut d_grads = BTreeMap::new();
        let mut total = 0.0;
        let mut counted = 0usize;
        for s in &samples {
            if s.crops.is_empty() {
                continue;
            }
            let mut dctx = Ctx::new(&d_store, true);
            dctx.g.set_check_finite(false);
            let real = dctx.input(s.target.clone());
            let fake = dctx.input(s.ctx.g.value(s.pass.mel).clone());
            let mut pairs = Vec::new();
            for &(w, start) in &s.crops {
                let r = discriminate(&mut dctx, &cfg, real, w, start)?;
                let f = discriminate(&mut dctx, &cfg, fake, w, start)?;
                pairs.push((r, f));
            }
            let loss = lsgan_d(&mut dctx.g, &pairs)?.expect("non-empty crops");
            let v = dctx.g.value(loss).item() as f64;
            if !v.is_finite() {
                return Err(numeric(step, &ids, "discriminator loss"));
            }
            total += v;
            counted += 1;
            let mut grads = dctx.g.backward(loss)?;
            accumulate(&mut d_grads, dctx.param_grads(&mut grads));
        }
        scale_all(&mut d_grads, 1.0 / counted as f32);
        clip_grad_norm(&mut d_grads, tc.grad_clip);
        state.opt_d.step(&mut d_store, &d_grads, |_| lr);
        d_loss = Some(total / counted as f64);
    }

    let mut g_grads = BTreeMap::new();
    let mut adv_sum = 0.0;
    let mut adv_count = 0usize;
    for mut s in samples {
        let mut loss = s.recon;
        if adversarial && !s.crops.is_empty() {
            s.ctx.bind_frozen(&d_store);
            let mut scores = Vec::new();
            for &(w, start) in &s.crops {
                scores.push(discriminate(&mut s.ctx, &cfg, s.pass.mel, w, start)?);
            }
            let adv = lsgan_g(&mut s.ctx.g, &scores)?.expect("non-empty crops");
            adv_sum += s.ctx.g.value(adv).item() as f64;
            adv_count += 1;
            let weighted = s.ctx.g.scale(adv, tc.lambda_adv as f32)?;
            loss = s.ctx.g.add(loss, weighted)?;
        }
        if !s.ctx.g.value(loss).is_finite() {
            return Err(numeric(step, &ids, "generator loss"));
        }
        let mut grads = s.ctx.g.backward(loss)?;
        accumulate(&mut g_grads, s.ctx.param_grads(&mut grads));
    }
    scale_all(&mut g_grads, inv_b);
    if g_grads.values().any(|g| !g.is_finite()) {
        return Err(numeric(step, &ids, "gradient"));
    }
    let grad_norm = clip_grad_norm(&mut g_grads, tc.grad_clip);
    state.opt_g.step(&mut state.model.params, &g_grads, |n| if n.starts_with("prosody.") { plr } else { lr });
    state.model.params.merge(d_store);
    state.step = step;

    let n = batch.len() as f64;
    Ok(StepStats {
        step,
        l1: l1_sum / n,
        ce: ce_sum.map(|c| c / n),
        g_adv: (adv_count > 0).then(|| adv_sum / adv_count as f64),
        d_loss,
        lr,
        grad_norm,
    })
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("ckpt_{step:08}.ptck"))
}

/// Opens the loss log for appending, dropping rows past `step` left by an
/// interrupted run.
fn open_loss_log(path: &Path, step: u64) -> Result<std::fs::File> {
    let mut lines: Vec<String> = match std::fs::read_to_string(path) {
        Ok(text) => text.lines().map(str::to_string).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    if lines.first().map(String::as_str) != Some(LOSS_HEADER) {
        lines.clear();
        lines.push(LOSS_HEADER.to_string());
    }
    lines.retain(|l| l == LOSS_HEADER || l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step));
    let mut body = lines.join("\n");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

/// Runs until `state.step` reaches the configured step count, logging losses
/// to `out_dir/losses.csv` and checkpointing periodically and at the end.
pub fn train(
    state: &mut TrainState,
    examples: &[Example],
    out_dir: &Path,
    mut on_step: impl FnMut(&StepStats),
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOSS_LOG);
    let mut log = open_loss_log(&log_path, state.step)?;
    let tc = state.run.train.clone();
    while state.step < tc.steps {
        let stats = train_step(state, examples)?;
        if tc.log_every > 0 && stats.step % tc.log_every == 0 {
            writeln!(log, "{}", stats.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        }
        on_step(&stats);
        if tc.checkpoint_every > 0 && state.step % tc.checkpoint_every == 0 {
            save_checkpoint(state, &checkpoint_path(out_dir, state.step))?;
            save_checkpoint(state, &out_dir.join(LATEST))?;
        }
    }
    save_checkpoint(state, &out_dir.join(LATEST))
}

/// Held-fixed reconstruction and teacher-forced unit accuracy over a set of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    /// Mean of the per-example masked L1.
    pub l1: f64,
    /// Top-1 accuracy per stream (duration, pitch, energy) over all steps.
    pub accuracy: [f64; 3],
}

/// Runs the teacher-forced generator on every example with a prompt plan and
/// noise drawn from `seed`, without touching any training state.
pub fn evaluate(model: &Model, tc: &TrainConfig, examples: &[Example], seed: u64) -> Result<EvalStats> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let cfg = &model.cfg;
    let mut rng = SeededRng::derived(seed, "eval");
    let mut l1_sum = 0.0;
    let mut hits = [0usize; 3];
    let mut steps = 0usize;
    for ex in examples {
        let plan = sample_prompt_plan(ex.mel.frames(), tc, &mut rng)
            .ok_or_else(|| Error::Data(format!("utterance {} is too short to evaluate", ex.id)))?;
        let noise = sample_noise(&mut rng, cfg.adaptive.noise_dim);
        let mut ctx = Ctx::new(&model.params, false);
        let sp = ex.mel.slice(plan.segment().start, plan.segment().end);
        let pp = ex.mel.slice(plan.prosody_segment().start, plan.prosody_segment().end);
        let pass = generator_pass(&mut ctx, cfg, &ex.phoneme_ids, &ex.units, &sp, &pp, &noise)?;
        let target = mel_tensor(&ex.mel, cfg.n_mels)?;
        let l1 = masked_l1(&mut ctx.g, pass.mel, &target, &plan.mask)?;
        l1_sum += ctx.g.value(l1).item() as f64;
        for (k, s) in Stream::ALL.iter().enumerate() {
            let logits = ctx.g.value(pass.logits.get(*s));
            for (t, &u) in ex.units.stream(*s).iter().enumerate() {
                if argmax(logits.row(t)) == u {
                    hits[k] += 1;
                }
            }
        }
        steps += ex.units.len();
    }
    Ok(EvalStats { l1: l1_sum / examples.len() as f64, accuracy: hits.map(|h| h as f64 / steps as f64) })
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
