//! Sequential vs rayon execution of the per-sample work: one training step
//! (forward + backward per sample) and greedy captioning of a batch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tactcap::data::{synth_corpus, SynthConfig};
use tactcap::decoder::DecodeMode;
use tactcap::dsp::InputMode;
use tactcap::exec::{self, Execution};
use tactcap::training::{Dataset, ModelConfig, TrainConfig, Trainer};

fn setup() -> (ModelConfig, Dataset) {
    let corpus = synth_corpus(&SynthConfig {
        materials: 8,
        samples_per_material: 4,
        duration: 0.4,
        ..SynthConfig::default()
    })
    .expect("corpus");
    let mut model = ModelConfig::with_width(32);
    model.encoder.blocks = 1;
    model.decoder.blocks = 1;
    let data = Dataset::build(
        &corpus.records,
        &corpus.signals,
        InputMode::Dft321,
        None,
        &model.encoder.dsp,
        model.decoder.max_len,
    )
    .expect("dataset");
    (model, data)
}

fn bench(c: &mut Criterion) {
    let (model, data) = setup();
    let cfg = TrainConfig {
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let mut t = Trainer::new(model.clone(), cfg.clone(), data.vocab.clone(), &data.train)
            .expect("trainer")
            .with_execution(exec);
        group.bench_function(BenchmarkId::from_parameter(format!("{exec:?}")), |b| {
            b.iter(|| t.step().expect("step"))
        });
    }
    group.finish();

    let trained = Trainer::new(model, cfg, data.vocab.clone(), &data.train)
        .expect("trainer")
        .model();
    let mut group = c.benchmark_group("caption_batch");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(BenchmarkId::from_parameter(format!("{exec:?}")), |b| {
            b.iter(|| {
                exec::map(exec, &data.eval, |s| {
                    trained.caption(&s.input, DecodeMode::Greedy).expect("caption")
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
