use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pamacf::attack::{attack, least_popular_items, AttackSpec};
use pamacf::dataset::{synthetic_clusters, SplitConfig, SyntheticConfig};
use pamacf::math::rng_for;
use pamacf::metrics::evaluate;
use pamacf::model::EmbeddingModel;
use pamacf::theory::{estimate_error, GaussianConfig, ProbeSpec, SamplerMode, TrainingKind};
use pamacf::train::{batch_gradient, epoch_triples, fit, train, TrainConfig, TrainMode};
use pamacf::InteractionDataset;

fn dataset() -> InteractionDataset {
    let ds = synthetic_clusters(&SyntheticConfig::default()).unwrap();
    ds.split(&SplitConfig::default()).unwrap()
}

fn training(c: &mut Criterion) {
    let ds = dataset();
    let mut g = c.benchmark_group("train_epoch");
    for mode in [TrainMode::Standard, TrainMode::Apr, TrainMode::Pamacf] {
        let cfg = TrainConfig { mode, total_epochs: 1, eta: 2.0, ..Default::default() };
        let m = EmbeddingModel::init(ds.n_users(), ds.n_items(), cfg.dim, 0, cfg.init_scale).unwrap();
        g.bench_function(format!("{mode:?}").to_lowercase(), |b| {
            b.iter_batched(|| m.clone(), |mut m| train(&mut m, &ds, &cfg, |_| {}).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();

    let cfg = TrainConfig { mode: TrainMode::Pamacf, ..Default::default() };
    let m = EmbeddingModel::init(ds.n_users(), ds.n_items(), cfg.dim, 0, cfg.init_scale).unwrap();
    let triples = epoch_triples(&ds, &mut rng_for(0, 1)).unwrap();
    let batch = &triples[..cfg.batch_size];
    let mean = m.mean_user_norm();
    c.bench_function("batch_gradient_pamacf_256", |b| {
        b.iter(|| batch_gradient(black_box(&m), batch, &cfg, 1, mean).unwrap())
    });
}

fn evaluation(c: &mut Criterion) {
    let ds = dataset();
    let targets = least_popular_items(&ds, 3, 1);
    let poisoned = attack(&ds, &AttackSpec { budget: 0.05, targets: targets.clone(), ..Default::default() }).unwrap();
    let (m, _) = fit(poisoned.dataset(), &TrainConfig { total_epochs: 2, ..Default::default() }).unwrap();
    c.bench_function("evaluate_k10_20", |b| {
        b.iter(|| evaluate(black_box(&m), &poisoned, &[10, 20], Some(&targets)).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let cfg = GaussianConfig { n: 1000, d: 32, sigma: 0.02, lambda: 1.0, epsilon: 5.0, adv_epochs: 1, mc_samples: 20_000, ..Default::default() };
    let mut g = c.benchmark_group("monte_carlo_20k");
    g.sample_size(10);
    for (name, kind) in [("standard", TrainingKind::Standard), ("adversarial", TrainingKind::Adversarial)] {
        g.bench_function(name, |b| {
            b.iter(|| estimate_error(black_box(&cfg), kind, None, &ProbeSpec::Boundary, SamplerMode::Direct).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, training, evaluation, monte_carlo);
criterion_main!(benches);
