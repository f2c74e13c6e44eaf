use aevit_tensor::{Graph, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(-1.0..1.0))
}

/// Run `f` on the default pool and, when parallel, on a one-thread pool.
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

fn conv(c: &mut Criterion) {
    let x = rand_tensor(&[16, 16, 32, 32], 1);
    let w = rand_tensor(&[32, 16, 3, 3], 2);
    let mut group = c.benchmark_group("conv2d_fwd_bwd_16x16x32x32");
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    let mut g = Graph::<f32>::new();
                    let xv = g.input(x.clone());
                    let wv = g.leaf(w.clone());
                    let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
                    let l = g.mean(y).unwrap();
                    g.backward(l).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn conv_transpose(c: &mut Criterion) {
    let x = rand_tensor(&[16, 32, 16, 16], 3);
    let w = rand_tensor(&[32, 16, 3, 3], 4);
    let mut group = c.benchmark_group("conv_transpose2d_fwd_16x32x16x16");
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    let mut g = Graph::<f32>::new();
                    let xv = g.input(x.clone());
                    let wv = g.input(w.clone());
                    g.conv_transpose2d(xv, wv, None, 2, 1, 1).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn attention_matmul(c: &mut Criterion) {
    let q = rand_tensor(&[64, 17, 16], 5);
    let k = rand_tensor(&[64, 17, 16], 6);
    let mut group = c.benchmark_group("batched_matmul_64x17x16");
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    let mut g = Graph::<f32>::new();
                    let qv = g.leaf(q.clone());
                    let kv = g.leaf(k.clone());
                    let s = g.matmul_t(qv, kv, false, true).unwrap();
                    let a = g.softmax(s).unwrap();
                    let l = g.sum(a).unwrap();
                    g.backward(l).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn group_norm(c: &mut Criterion) {
    let x = rand_tensor(&[16, 32, 32, 32], 7);
    let mut group = c.benchmark_group("group_norm_16x32x32x32");
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    let mut g = Graph::<f32>::new();
                    let xv = g.leaf(x.clone());
                    let y = g.group_norm(xv, 8, 1e-5).unwrap();
                    let l = g.mean(y).unwrap();
                    g.backward(l).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, conv_transpose, attention_matmul, group_norm);
criterion_main!(benches);
