//! Sequential versus rayon execution of the two data-parallel hot paths:
//! a training step and the all-combinations evaluation sweep.

use std::hint::black_box;

use channelvit::data::{generate, SynthConfig};
use channelvit::evaluation::evaluate_all_combinations;
use channelvit::experiments::desk_train_config;
use channelvit::models::{ModelConfig, ModelParams, Variant};
use channelvit::parallel::{self, Execution};
use channelvit::rng;
use channelvit::sampling::SamplingMode;
use channelvit::training::{Example, Trainer};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn data() -> channelvit::data::Dataset {
    let cfg = SynthConfig {
        train_samples: 64,
        test_samples: 1,
        ..SynthConfig::redundant_rgb(0)
    };
    generate(&cfg).unwrap().0.dataset
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn train_step(c: &mut Criterion) {
    let ds = data();
    let batch: Vec<Example> = (0..32).map(|i| Example::new(ds.image(i), ds.label(i))).collect();
    let cfg = ModelConfig::tiny(3, 4, 32, Variant::ChannelVitTied);
    let params = ModelParams::init(&cfg, &mut rng::seeded(0)).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            parallel::set_execution(mode);
            let tc = desk_train_config(10, 0, SamplingMode::Hcs);
            let mut trainer = Trainer::new(params.clone(), tc, 2).unwrap();
            b.iter(|| black_box(trainer.train_step(&batch).unwrap()));
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let ds = data();
    let cfg = ModelConfig::tiny(3, 4, 32, Variant::ChannelVitTied);
    let params = ModelParams::init(&cfg, &mut rng::seeded(0)).unwrap();
    let mut group = c.benchmark_group("evaluate_all_combinations");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            parallel::set_execution(mode);
            b.iter(|| black_box(evaluate_all_combinations(&params, &ds).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, sweep);
criterion_main!(benches);
