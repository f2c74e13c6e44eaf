use aevit_core::data::{build_splits, generate, AdrParams, SolverConfig, Split, SplitSpec};
use aevit_core::eval::{evaluate, ModelSurrogate};
use aevit_core::train::{TrainConfig, TrainState, Trainer};
use aevit_core::{Model, ModelConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The default pool and, when parallel, a one-thread pool.
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let mut out = vec![("default", None)];
    if aevit_tensor::par::is_parallel() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        out.push(("one-thread", Some(pool)));
    }
    out
}

fn run_in<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn desk_splits() -> aevit_core::data::Splits {
    build_splits(&SplitSpec {
        n_train: 16,
        n_valid: 4,
        n_test: 16,
        train_steps: 20,
        test_steps: 20,
        ..SplitSpec::default()
    })
    .unwrap()
}

fn train_step(c: &mut Criterion) {
    let s = desk_splits();
    let (model, init) = Model::new(&ModelConfig::desk(), 0).unwrap();
    let cfg = TrainConfig {
        batch: 8,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(&model, cfg.clone(), &s.train, &s.valid).unwrap();
    let mut group = c.benchmark_group("desk_train_step_batch8_window4");
    group.sample_size(10);
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut st = TrainState::new(init.clone(), &cfg);
            b.iter(|| run_in(&pool, || trainer.step(&mut st).unwrap()));
        });
    }
    group.finish();
}

fn rollout(c: &mut Criterion) {
    let s = desk_splits();
    let (model, params) = Model::new(&ModelConfig::desk(), 0).unwrap();
    let norm = aevit_core::data::Normalizer::fit(&s.train).unwrap();
    let sims: Vec<usize> = (0..16).collect();
    let mut group = c.benchmark_group("desk_rollout_16sims_10steps");
    group.sample_size(10);
    for (name, pool) in modes() {
        for batch in [4, 16] {
            let sur = ModelSurrogate {
                model: &model,
                params: &params,
                normalizer: &norm,
                batch,
            };
            group.bench_function(BenchmarkId::new(name, format!("batch{batch}")), |b| {
                b.iter(|| run_in(&pool, || evaluate(&sur, &s.test, &sims, 10).unwrap()));
            });
        }
    }
    group.finish();
}

fn solver(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let params: Vec<AdrParams> = (0..16).map(|_| AdrParams::sample(&mut r)).collect();
    let mut group = c.benchmark_group("adr_16sims_100steps");
    group.sample_size(10);
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_in(&pool, || generate(&params, SolverConfig::default(), 100, Split::Test).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, rollout, solver);
criterion_main!(benches);
