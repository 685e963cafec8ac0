use std::path::Path;

use anyhow::{bail, Context, Result};
use promptts_core::corpus::oracle::RippleF0;
use promptts_core::corpus::toy::{generate_corpus, ToySpec};
use promptts_core::corpus::{load_corpus, matrix, units_for, ProsodyFamily, Split, MANIFEST};
use promptts_core::features::render::griffin_lim;
use promptts_core::features::wav::write_wav;
use promptts_core::features::{MelSpectrogram, N_MELS};
use promptts_core::metrics::{self, MetricRow};
use promptts_core::model::{Model, RepMode, Sampling};
use promptts_core::numerics::Tensor;
use promptts_core::tasks::{analyze_representation, SynthesisRequest, SynthesisResult};
use promptts_core::train::checkpoint::{load_checkpoint, MAGIC};
use promptts_core::train::trainer::LATEST;
use promptts_core::train::{prepare_examples, train, TrainState};
use promptts_core::{Error, ModelConfig, RunConfig, TrainConfig};

use crate::manifest::{sha256_hex, Manifest};
use crate::{
    plot, prompt, AnalyzeArgs, AnalyzeMode, Command, InspectArgs, MetricsArgs, PrepareArgs, RequestArgs, SynthArgs,
    ToyPreset, ToygenArgs, TrainArgs, TrainPreset,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Toygen(a) => toygen(a),
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Analyze(a) => analyze(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn toygen(a: ToygenArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<ToySpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => match a.preset {
            ToyPreset::Default => ToySpec { seed: a.seed, ..ToySpec::default() },
            ToyPreset::Overfit => ToySpec::overfit(a.seed),
        },
    };
    if a.spec.is_some() {
        spec.seed = a.seed;
    }
    if let Some(f) = &a.family {
        spec.family = f.parse::<ProsodyFamily>().map_err(|e| Error::Usage(e.to_string()))?;
    }
    spec.render_audio |= a.render_audio;
    spec.validate()?;
    let corpus = generate_corpus(&spec, &a.out, a.force)?;
    eprintln!("wrote {} utterances to {}", corpus.utterances.len(), a.out.display());
    let mut m = Manifest::new("toygen", a.seed);
    m.input("spec", toml::to_string(&spec)?);
    m.write(&a.out)
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let out = a.out.clone().unwrap_or_else(|| a.corpus.join("prepared"));
    create_dir(&out)?;
    let stats = corpus.speaker_stats()?;
    let mut s = String::from("speaker\tf0_mean\tf0_std\tenergy_mean\tenergy_std\n");
    for st in stats.values() {
        s += &format!("{}\t{}\t{}\t{}\t{}\n", st.speaker_id, st.f0_mean, st.f0_std, st.energy_mean, st.energy_std);
    }
    std::fs::write(out.join("speakers.tsv"), s)?;
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut u = String::from("id\tspeaker\tsplit\tduration\tpitch\tenergy\n");
    for utt in &corpus.utterances {
        let st = stats
            .get(&utt.speaker)
            .ok_or_else(|| Error::Data(format!("utterance {}: speaker {} has no voiced frames", utt.id, utt.speaker)))?;
        let units = units_for(utt, st)?;
        u += &format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            utt.id,
            utt.speaker,
            utt.split,
            join(units.duration()),
            join(units.pitch()),
            join(units.energy())
        );
    }
    std::fs::write(out.join("units.tsv"), u)?;
    eprintln!("prepared {} utterances into {}", corpus.utterances.len(), out.display());
    let mut m = Manifest::new("prepare", a.seed);
    m.input_file("corpus_manifest", &a.corpus.join(MANIFEST))?;
    m.write(&out)
}

fn build_run(a: &TrainArgs) -> Result<RunConfig> {
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let corpus = a.corpus.clone().ok_or_else(|| Error::Usage("train needs --config or --corpus".into()))?;
            let out = a.out.clone().ok_or_else(|| Error::Usage("train needs --config or --out".into()))?;
            let c = load_corpus(&corpus)?;
            let train = match a.preset {
                TrainPreset::Desk => TrainConfig::default(),
                TrainPreset::Overfit => TrainConfig::overfit(),
            };
            RunConfig { corpus, out_dir: out, model: ModelConfig::desk(c.phoneme_inventory()), train }
        }
    };
    if a.config.is_some() {
        if let Some(c) = &a.corpus {
            run.corpus = c.clone();
        }
        if let Some(o) = &a.out {
            run.out_dir = o.clone();
        }
    }
    let t = &mut run.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.seed = a.seed.unwrap_or(t.seed);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
    let ab = &mut run.model.ablation;
    ab.no_source_filter |= a.no_source_filter;
    ab.no_adaptive_kernels |= a.no_adaptive_kernels;
    ab.no_film |= a.no_film;
    run.model.validate()?;
    Ok(run)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let run = build_run(&a)?;
    let out = run.out_dir.clone();
    let latest = out.join(LATEST);
    let mut state = if a.resume {
        if !latest.is_file() {
            bail!(Error::Usage(format!("--resume: no checkpoint at {}", latest.display())));
        }
        let mut st = load_checkpoint(&latest, Some(&run.model.hash()), a.force)?;
        if let Some(s) = a.steps {
            st.run.train.steps = s;
        }
        if st.step >= st.run.train.steps {
            println!("run already complete at step {} of {}", st.step, st.run.train.steps);
            return Ok(());
        }
        st
    } else {
        if latest.exists() {
            bail!(Error::Usage(format!("{} already holds a run; pass --resume to continue it", out.display())));
        }
        TrainState::new(run)?
    };
    create_dir(&out)?;
    std::fs::write(out.join("config.toml"), state.run.to_toml())?;
    let corpus = load_corpus(&state.run.corpus)?;
    let examples = prepare_examples(&corpus, &state, Split::Train)?;
    eprintln!(
        "training {} parameters on {} utterances from step {} to {}",
        state.model.params.num_scalars(),
        examples.len(),
        state.step,
        state.run.train.steps
    );
    let every = (state.run.train.steps / 20).max(1);
    train(&mut state, &examples, &out, |s| {
        if s.step % every == 0 {
            eprintln!("step {} l1 {:.4} ce {:.4} lr {:.2e}", s.step, s.l1, s.ce.iter().sum::<f64>(), s.lr);
        }
    })?;
    println!("finished at step {}", state.step);
    let mut m = Manifest::new("train", state.run.train.seed);
    m.config_hash = Some(state.run.hash());
    m.input_file("corpus_manifest", &state.run.corpus.join(MANIFEST))?;
    m.write(&out)
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(load_checkpoint(path, None, false)?.model)
}

struct Prepared {
    model: Model,
    req: SynthesisRequest,
    manifest: Manifest,
}

fn prepare_request(a: &RequestArgs, command: &str) -> Result<Prepared> {
    if a.temperature < 0.0 || !a.temperature.is_finite() {
        bail!(Error::Usage(format!("--temperature must be a non-negative number, got {}", a.temperature)));
    }
    let model = load_model(&a.checkpoint)?;
    let corpus = prompt::open_corpus(a.corpus.as_deref())?;
    let (phonemes, language) = prompt::phonemes(a.text.as_deref(), a.text_from.as_deref(), corpus.as_ref())?;
    let sp = prompt::resolve(&a.speaker_prompt, corpus.as_ref())?;
    let style = a.style_prompt.as_deref().map(|s| prompt::resolve(s, corpus.as_ref())).transpose()?;
    let mut req = SynthesisRequest::new(a.id.clone(), phonemes.clone(), sp.mel, a.seed);
    req.language = language;
    req.prompt_language = sp.language;
    req.style_prompt = style.as_ref().map(|p| p.mel.clone());
    req.unit_offsets = [a.duration_offset, a.pitch_offset, a.energy_offset];
    req.sampling = if a.temperature > 0.0 { Sampling::Temperature(a.temperature) } else { Sampling::Greedy };

    let mut m = Manifest::new(command, a.seed);
    m.config_hash = Some(model.cfg.hash());
    m.input_file("checkpoint", &a.checkpoint)?;
    m.input("id", &a.id).input("phonemes", phonemes.join(" ")).input("speaker_prompt", &sp.source);
    let style_src = style.map(|p| p.source).filter(|_| req.is_style_transfer());
    m.input("style_prompt", style_src.unwrap_or_default());
    m.input("unit_offsets", format!("{:?}", req.unit_offsets)).input("temperature", a.temperature);
    Ok(Prepared { model, req, manifest: m })
}

fn write_result(dir: &Path, r: &SynthesisResult, render_audio: bool) -> Result<()> {
    create_dir(dir)?;
    let id = &r.id;
    matrix::write(&dir.join(format!("{id}.mel")), &Tensor::new(&[r.mel.frames(), N_MELS], r.mel.data().to_vec())?)?;
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let units = format!(
        "duration\t{}\npitch\t{}\nenergy\t{}\n",
        join(r.units.duration()),
        join(r.units.pitch()),
        join(r.units.energy())
    );
    std::fs::write(dir.join(format!("{id}.units.tsv")), units)?;
    let ripple = RippleF0::default().contour(&r.mel);
    let mut csv = String::from("frame,pitch_proxy,ripple_f0\n");
    for (t, (p, f)) in r.f0_proxy.iter().zip(&ripple).enumerate() {
        csv += &format!("{t},{p:.6},{f:.1}\n");
    }
    std::fs::write(dir.join(format!("{id}.f0.csv")), csv)?;
    plot::mel_png(&r.mel, &dir.join(format!("{id}.mel.png")))?;
    plot::contour_png(&[&r.f0_proxy], false, &dir.join(format!("{id}.f0.png")))?;
    if render_audio {
        write_wav(&dir.join(format!("{id}.wav")), &griffin_lim(&r.mel, 32))?;
    }
    println!(
        "{id}: {} frames, {} phonemes{}{}",
        r.mel.frames(),
        r.units.len(),
        if r.cross_lingual { ", cross-lingual" } else { "" },
        if r.style_transfer { ", style transfer" } else { "" }
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let p = prepare_request(&a.req, "synth")?;
    let r = analyze_representation(&p.model, &p.req, RepMode::Coarse)?;
    write_result(&a.req.out, &r, a.req.render_audio)?;
    p.manifest.write(&a.req.out)
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let mut p = prepare_request(&a.req, "analyze")?;
    let mode = match a.mode {
        AnalyzeMode::Coarse => RepMode::Coarse,
        AnalyzeMode::FilterOnly => RepMode::FilterOnly,
        AnalyzeMode::SourceOnly => RepMode::SourceOnly,
    };
    p.manifest.input("mode", format!("{mode:?}"));
    let r = analyze_representation(&p.model, &p.req, mode)?;
    write_result(&a.req.out, &r, a.req.render_audio)?;
    p.manifest.write(&a.req.out)
}

fn read_durations(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::Data(format!("{}: bad duration `{s}`", path.display())).into()))
        .collect()
}

fn metric_row(rows: &mut Vec<MetricRow>, id: &str, metric: &str, v: promptts_core::Result<f64>) {
    let value = v.unwrap_or_else(|e| {
        eprintln!("warning: {id} {metric}: {e}");
        f64::NAN
    });
    rows.push(MetricRow { id: id.to_string(), metric: metric.to_string(), value });
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let mut names: Vec<String> = std::fs::read_dir(&a.pairs)
        .with_context(|| format!("listing {}", a.pairs.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".out.mel")).map(str::to_string))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!(Error::Data(format!("no `<name>.out.mel` files in {}", a.pairs.display())));
    }
    let f0 = RippleF0::default();
    let mut rows = Vec::new();
    let mut m = Manifest::new("metrics", a.seed);
    for name in &names {
        let out_p = a.pairs.join(format!("{name}.out.mel"));
        let prm_p = a.pairs.join(format!("{name}.prompt.mel"));
        if !prm_p.is_file() {
            bail!(Error::Data(format!("{name}: missing {}", prm_p.display())));
        }
        m.input_file(&format!("{name}.out"), &out_p)?;
        m.input_file(&format!("{name}.prompt"), &prm_p)?;
        let (out, prm): (MelSpectrogram, MelSpectrogram) = (prompt::read_mel(&out_p)?, prompt::read_mel(&prm_p)?);
        let (co, cp) = (f0.contour(&out), f0.contour(&prm));
        metric_row(&mut rows, name, "f0_pcc", metrics::f0_pcc(&co, &cp));
        metric_row(&mut rows, name, "f0_dtw", metrics::f0_dtw(&co, &cp));
        if let Some(model) = &model {
            metric_row(&mut rows, name, "secs", metrics::embed_similarity(model, &out, &prm));
        }
        let (dp, dr) = (a.pairs.join(format!("{name}.out.dur")), a.pairs.join(format!("{name}.ref.dur")));
        if dp.is_file() && dr.is_file() {
            metric_row(&mut rows, name, "dur_rmse", metrics::duration_rmse(&read_durations(&dp)?, &read_durations(&dr)?));
        }
    }
    create_dir(&a.out)?;
    std::fs::write(a.out.join("metrics.csv"), metrics::to_csv(&rows))?;
    println!("{} rows for {} pairs", rows.len(), names.len());
    if let Some(c) = &a.checkpoint {
        m.input_file("checkpoint", c)?;
    }
    m.write(&a.out)
}

fn prefix_counts(model: &Model) -> Vec<(String, usize)> {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for (k, t) in model.params.iter() {
        let top = k.split('.').next().unwrap_or(k).to_string();
        *counts.entry(top).or_default() += t.numel();
    }
    counts.into_iter().collect()
}

fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = std::fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let (model, header) = if bytes.starts_with(MAGIC) {
        let st = load_checkpoint(&a.path, None, false)?;
        let header = format!(
            "checkpoint {}\nstep {}\nrun config hash {}\noptimizer steps g={} d={}\n",
            a.path.display(),
            st.step,
            st.run.hash(),
            st.opt_g.t,
            st.opt_d.t
        );
        (st.model, header + &st.run.to_toml())
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Usage(format!("{} is neither a checkpoint nor a config", a.path.display())))?;
        let run = RunConfig::parse(&text)?;
        let header = format!("run config {}\nrun config hash {}\ninit seed {}\n", a.path.display(), run.hash(), a.seed);
        (Model::init(run.model.clone(), a.seed)?, header)
    };
    println!("{}", header.trim_end());
    println!("model config hash {}", model.cfg.hash());
    for (k, n) in prefix_counts(&model) {
        println!("params {k:<10} {n}");
    }
    println!("params total      {}", model.params.num_scalars());
    println!("param digest {}", sha256_hex(format!("{:?}", model.params.iter().map(|(k, t)| (k, t.shape())).collect::<Vec<_>>()).as_bytes()));
    Ok(())
}
