use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use efb_core::efb::{ArchConfig, EfbModel, ForwardOptions, TrainConfig, Trainer};
use efb_core::eval::TestSet;
use efb_core::nn::Tape;
use efb_core::SystemConfig;

fn desk_config() -> SystemConfig {
    SystemConfig { n_antennas: 16, n_users: 2, n_pilots: 4, n_bits: 10, ..Default::default() }
}

fn forward_backward(c: &mut Criterion) {
    let sys = desk_config();
    let model = EfbModel::new(sys, ArchConfig::default(), 0).unwrap();
    let test = TestSet::generate(&sys, 0, 256);
    c.bench_function("forward_backward_256", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let out = model
                .loss_with_noise(&mut tape, &test.channels, &test.noise, sys.noise_var(), ForwardOptions::TRAIN)
                .unwrap();
            tape.backward(out.loss).unwrap();
        })
    });
}

fn train_step(c: &mut Criterion) {
    let sys = desk_config();
    let cfg = TrainConfig { epochs: 1, batches_per_epoch: 1, batch_size: 256, ..Default::default() };
    let model = EfbModel::new(sys, ArchConfig::default(), 0).unwrap();
    let trainer = Trainer::new(&model, cfg).unwrap();
    let (channels, noise) = trainer.batch(&model, 0, 0);
    c.bench_function("train_step_256", |b| {
        b.iter_batched(
            || (model.clone(), trainer.clone()),
            |(mut m, mut t)| t.step(&mut m, &channels, &noise).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn inference(c: &mut Criterion) {
    let sys = SystemConfig::default();
    let model = EfbModel::new(sys, ArchConfig::default(), 0).unwrap();
    let test = TestSet::generate(&sys, 0, 500);
    c.bench_function("infer_500_nt64", |b| b.iter(|| model.infer(&test.channels, &test.noise).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward_backward, train_step, inference
}
criterion_main!(benches);
