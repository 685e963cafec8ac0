use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use promptts_core::corpus::load_corpus;
use promptts_core::train::trainer::LOSS_LOG;
use promptts_core::{ModelConfig, RunConfig, TrainConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptts"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().unwrap()
}

fn ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(out.status.success(), "{cmd:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Toy corpus plus a tiny-model run config with two steps.
struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    config: PathBuf,
    run: PathBuf,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus");
    ok(bin().args(["toygen", "--preset", "overfit", "--seed", "4", "--out"]).arg(&corpus));
    let inventory = load_corpus(&corpus).unwrap().phoneme_inventory();
    let cfg = RunConfig {
        corpus: corpus.clone(),
        out_dir: root.join("run"),
        model: ModelConfig::tiny(inventory),
        train: TrainConfig { steps: 2, batch_size: 2, warmup_steps: 4, checkpoint_every: 0, ..Default::default() },
    };
    let config = root.join("run.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();
    Setup { run: root.join("run"), _dir: dir, root, corpus, config }
}

fn train(s: &Setup) {
    ok(bin().arg("train").arg("--config").arg(&s.config));
}

fn first_id(corpus: &Path) -> String {
    load_corpus(corpus).unwrap().utterances[0].id.clone()
}

fn request(s: &Setup, cmd: &str, out: &Path) -> Command {
    let id = first_id(&s.corpus);
    let mut c = bin();
    c.arg(cmd)
        .arg("--checkpoint")
        .arg(s.run.join("latest.ptck"))
        .arg("--corpus")
        .arg(&s.corpus)
        .args(["--text-from", &id, "--speaker-prompt", &id, "--seed", "3", "--out"])
        .arg(out);
    c
}

#[test]
fn toygen_writes_corpus_and_manifest() {
    let s = setup();
    for f in ["manifest.tsv", "spec.toml", "manifest.json"] {
        assert!(s.corpus.join(f).is_file(), "{f}");
    }
    let again = run(bin().args(["toygen", "--preset", "overfit", "--out"]).arg(&s.corpus));
    assert!(!again.status.success());
    ok(bin().args(["toygen", "--preset", "overfit", "--seed", "4", "--force", "--out"]).arg(&s.corpus));
}

#[test]
fn train_then_resume() {
    let s = setup();
    train(&s);
    assert!(s.run.join("latest.ptck").is_file());
    let log = std::fs::read_to_string(s.run.join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 3);

    let again = run(bin().arg("train").arg("--config").arg(&s.config));
    assert_eq!(again.status.code(), Some(1));

    let done = ok(bin().arg("train").arg("--config").arg(&s.config).arg("--resume"));
    assert!(done.contains("already complete"), "{done}");

    ok(bin().arg("train").arg("--config").arg(&s.config).args(["--resume", "--steps", "3"]));
    let log = std::fs::read_to_string(s.run.join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn synth_routes_identical_prompts_like_zero_shot() {
    let s = setup();
    train(&s);
    let id = first_id(&s.corpus);
    let a = s.root.join("a");
    let b = s.root.join("b");
    ok(&mut request(&s, "synth", &a));
    ok(request(&s, "synth", &b).args(["--style-prompt", &id]));
    let mel = |d: &Path| std::fs::read(d.join("synth.mel")).unwrap();
    assert_eq!(mel(&a), mel(&b));
    for f in ["synth.units.tsv", "synth.f0.csv", "synth.mel.png", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
}

#[test]
fn analyze_modes_differ() {
    let s = setup();
    train(&s);
    let mut mels = Vec::new();
    for mode in ["coarse", "filter-only", "source-only"] {
        let out = s.root.join(mode);
        ok(request(&s, "analyze", &out).args(["--mode", mode]));
        mels.push(std::fs::read(out.join("synth.mel")).unwrap());
    }
    assert_ne!(mels[1], mels[2]);
    let synth = s.root.join("synth");
    ok(&mut request(&s, "synth", &synth));
    assert_eq!(std::fs::read(synth.join("synth.mel")).unwrap(), mels[0]);
}

#[test]
fn metrics_writes_rows_per_pair() {
    let s = setup();
    train(&s);
    let out = s.root.join("synth");
    ok(&mut request(&s, "synth", &out));
    let pairs = s.root.join("pairs");
    std::fs::create_dir_all(&pairs).unwrap();
    let id = first_id(&s.corpus);
    std::fs::copy(out.join("synth.mel"), pairs.join("x.out.mel")).unwrap();
    std::fs::copy(s.corpus.join("feats").join(format!("{id}.mel")), pairs.join("x.prompt.mel")).unwrap();
    std::fs::write(pairs.join("x.out.dur"), "3 4 5").unwrap();
    std::fs::write(pairs.join("x.ref.dur"), "3,4,6").unwrap();
    let m = s.root.join("metrics");
    ok(bin().arg("metrics").arg("--pairs").arg(&pairs).arg("--checkpoint").arg(s.run.join("latest.ptck")).arg("--out").arg(&m));
    let csv = std::fs::read_to_string(m.join("metrics.csv")).unwrap();
    let metrics: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(metrics, ["f0_pcc", "f0_dtw", "secs", "dur_rmse"]);
    assert!(m.join("manifest.json").is_file());
}

#[test]
fn inspect_reports_parameters() {
    let s = setup();
    let text = ok(bin().arg("inspect").arg(&s.config));
    assert!(text.contains("params total"), "{text}");
    train(&s);
    let text = ok(bin().arg("inspect").arg(s.run.join("latest.ptck")));
    assert!(text.contains("step 2"), "{text}");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(bin().arg("train").arg("--resume-typo")).status.code(), Some(1));
    assert_eq!(run(bin().arg("synth")).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = run(bin().arg("inspect").arg(dir.path().join("nope.ptck")));
    assert_eq!(missing.status.code(), Some(2));
}
