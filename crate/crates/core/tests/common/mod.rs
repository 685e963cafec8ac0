#![allow(dead_code)]

pub mod gradcheck;

use promptts_core::features::{AcousticUnitSequence, MelSpectrogram, N_MELS};
use promptts_core::model::Model;
use promptts_core::numerics::SeededRng;
use promptts_core::ModelConfig;

pub fn symbols(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

pub fn tiny_cfg() -> ModelConfig {
    ModelConfig::tiny(symbols(8))
}

pub fn tiny_model(seed: u64) -> Model {
    Model::init(tiny_cfg(), seed).unwrap()
}

pub fn random_mel(frames: usize, rng: &mut SeededRng) -> MelSpectrogram {
    MelSpectrogram::new(frames, (0..frames * N_MELS).map(|_| (rng.normal() - 4.0) as f32).collect()).unwrap()
}

pub fn random_units(n: usize, rng: &mut SeededRng) -> AcousticUnitSequence {
    AcousticUnitSequence::new(
        (0..n).map(|_| rng.range_inclusive(0, 5)).collect(),
        (0..n).map(|_| rng.range_inclusive(0, 63)).collect(),
        (0..n).map(|_| rng.range_inclusive(0, 63)).collect(),
    )
    .unwrap()
}

pub fn random_ids(n: usize, vocab: usize, rng: &mut SeededRng) -> Vec<usize> {
    (0..n).map(|_| rng.range_inclusive(0, vocab - 1)).collect()
}

pub struct TinyRun {
    pub dir: tempfile::TempDir,
    pub state: promptts_core::train::TrainState,
    pub examples: Vec<promptts_core::train::Example>,
}

/// Tiny model on the overfit corpus, adversarial from the first step.
pub fn tiny_run(edit: impl FnOnce(&mut promptts_core::TrainConfig)) -> TinyRun {
    use promptts_core::corpus::{generate_corpus, Split, ToySpec};
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&ToySpec::overfit(7), &dir.path().join("corpus"), false).unwrap();
    let mut train = promptts_core::TrainConfig {
        steps: 3,
        batch_size: 2,
        warmup_steps: 10,
        adv_start_step: 1,
        checkpoint_every: 0,
        ..Default::default()
    };
    edit(&mut train);
    let run = promptts_core::RunConfig {
        corpus: dir.path().join("corpus"),
        out_dir: dir.path().join("out"),
        model: ModelConfig::tiny(corpus.phoneme_inventory()),
        train,
    };
    let state = promptts_core::train::TrainState::new(run).unwrap();
    let examples = promptts_core::train::prepare_examples(&corpus, &state, Split::Train).unwrap();
    TinyRun { dir, state, examples }
}
