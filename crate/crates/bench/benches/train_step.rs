use criterion::{criterion_group, criterion_main, Criterion};
use promptts_core::corpus::toy::{generate_corpus, ToySpec};
use promptts_core::corpus::Split;
use promptts_core::train::{prepare_examples, train_step, TrainState};
use promptts_core::{ModelConfig, RunConfig, TrainConfig};

fn step(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&ToySpec::overfit(7), dir.path(), false).unwrap();
    let run = RunConfig {
        corpus: dir.path().into(),
        out_dir: dir.path().join("run"),
        model: ModelConfig::desk(corpus.phoneme_inventory()),
        train: TrainConfig { batch_size: 1, adv_start_step: 1, ..TrainConfig::default() },
    };
    let mut state = TrainState::new(run).unwrap();
    let examples = prepare_examples(&corpus, &state, Split::Train).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("desk_batch1_adversarial", |b| b.iter(|| train_step(&mut state, &examples).unwrap()));
    group.finish();
}

criterion_group!(benches, step);
criterion_main!(benches);
