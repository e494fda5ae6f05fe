//! Hot-path throughput benchmarks.
//!
//! The crate fans dataset generation, batch gradients and held-out scoring
//! across rayon with the default `parallel` feature and falls back to plain
//! loops without it. Benchmark names carry the active mode, so running
//!
//! ```text
//! cargo bench -p squint-core
//! cargo bench -p squint-core --no-default-features
//! ```
//!
//! leaves two criterion baselines side by side for comparison.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use squint_core::baselines::{amo_design, av_single, fully_digital, AmoConfig};
use squint_core::channel::{
    generate_channel, generate_dataset, ArrayGeometry, ChannelRealization, SystemConfig,
};
use squint_core::gnn::{mean_holdout_se, GnnModel, GraphInit, ModelDims, TrainConfig};
use squint_core::system::LinkBudget;

#[cfg(feature = "parallel")]
const MODE: &str = "parallel";
#[cfg(not(feature = "parallel"))]
const MODE: &str = "sequential";

fn small_config() -> SystemConfig {
    SystemConfig::new(ArrayGeometry::new(4, 4), ArrayGeometry::new(2, 2), 2, 2, 4, 300e9, 30e9)
        .unwrap()
}

fn channels(cfg: &SystemConfig, count: usize, seed: u64) -> Vec<ChannelRealization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_channel(cfg, &mut rng).unwrap()).collect()
}

fn bench_dataset(c: &mut Criterion) {
    let cfg = small_config();
    let mut group = c.benchmark_group(format!("dataset/{MODE}"));
    group.sample_size(20).measurement_time(Duration::from_secs(3));
    group.bench_function("generate_256", |b| {
        b.iter(|| black_box(generate_dataset(&cfg, 256, 7).unwrap()))
    });
    group.finish();
}

fn bench_training_step(c: &mut Criterion) {
    let cfg = small_config();
    let model = GnnModel::new(ModelDims::new(16, 4, 2, 2).unwrap(), 2, 11).unwrap();
    let budget = LinkBudget::new(0.0).unwrap();
    let pool = channels(&cfg, 32, 13);
    let refs: Vec<&ChannelRealization> = pool.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inits: Vec<GraphInit> = (0..32).map(|_| model.init_graph(&mut rng)).collect();

    let mut group = c.benchmark_group(format!("gradient/{MODE}"));
    group.sample_size(20).measurement_time(Duration::from_secs(5));
    group.bench_function("batch_32", |b| {
        b.iter(|| black_box(model.batch_gradient(&refs, &inits, budget).unwrap()))
    });
    group.finish();
}

fn bench_heldout_scoring(c: &mut Criterion) {
    let cfg = small_config();
    let model = GnnModel::new(ModelDims::new(16, 4, 2, 2).unwrap(), 2, 19).unwrap();
    let budget = LinkBudget::new(0.0).unwrap();
    let holdout = channels(&cfg, 64, 23);

    let mut group = c.benchmark_group(format!("heldout/{MODE}"));
    group.sample_size(20).measurement_time(Duration::from_secs(3));
    group.bench_function("score_64", |b| {
        b.iter(|| black_box(mean_holdout_se(&model, &holdout, budget, 29).unwrap()))
    });
    group.finish();
}

fn bench_designers(c: &mut Criterion) {
    let cfg = small_config();
    let budget = LinkBudget::new(0.0).unwrap();
    let channel = channels(&cfg, 1, 31).pop().unwrap();
    let model = GnnModel::new(ModelDims::new(16, 4, 2, 2).unwrap(), 2, 37).unwrap();
    let amo = AmoConfig::default();

    let mut group = c.benchmark_group(format!("designers/{MODE}"));
    group.sample_size(30).measurement_time(Duration::from_secs(3));
    group.bench_function("fully_digital", |b| {
        b.iter(|| black_box(fully_digital(&channel, 2, budget).unwrap()))
    });
    group.bench_function("av_single", |b| {
        b.iter(|| black_box(av_single(&cfg, &channel, budget).unwrap()))
    });
    group.bench_function("amo", |b| {
        b.iter(|| black_box(amo_design(&channel, 2, 2, &amo, budget, 41).unwrap()))
    });
    group.bench_function("gnn_forward", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        b.iter(|| black_box(model.forward(&channel, &mut rng, budget).unwrap()))
    });
    group.finish();
}

fn bench_epoch_schedule(c: &mut Criterion) {
    // one full optimizer step at the published batch size, the unit the
    // training loop repeats 100 times per epoch
    let cfg = small_config();
    let mut model = GnnModel::new(ModelDims::new(16, 4, 2, 2).unwrap(), 2, 47).unwrap();
    let budget = LinkBudget::new(0.0).unwrap();
    let pool = channels(&cfg, 100, 53);
    let train_cfg = TrainConfig {
        epochs: 1,
        batches_per_epoch: 1,
        seed: 59,
        ..TrainConfig::default()
    };

    let mut group = c.benchmark_group(format!("train/{MODE}"));
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    group.bench_function("one_step_batch_100", |b| {
        b.iter(|| black_box(model.train(&pool, &[], &train_cfg, budget).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_dataset,
    bench_training_step,
    bench_heldout_scoring,
    bench_designers,
    bench_epoch_schedule
);
criterion_main!(benches);
