use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use heatmap_bfv::{encrypt, keygen, Evaluator, PlainVec};
use heatmap_core::linalg::{mat_mul_full, BsgsPlan, DiagonalCache, PreparedMatrix};
use heatmap_core::protocol::context_for;
use heatmap_core::CdrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn matmul(c: &mut Criterion) {
    let ctx = context_for("toy").unwrap();
    let n = ctx.n();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let plan = BsgsPlan::for_params(ctx.params()).unwrap();
    let keys = keygen(&ctx, &plan.rotation_indices(), false, &mut rng).unwrap();
    let ev = Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone())).unwrap();
    let rows = 2 * n;
    let cols = n;
    let z = CdrMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0..8)).collect()).unwrap();
    let pm = PreparedMatrix::new(ctx.clone(), Arc::new(z)).unwrap();
    let x: Vec<u64> = (0..rows).map(|_| rng.random_range(0..2)).collect();
    let blocks: Vec<_> = x
        .chunks(n)
        .map(|b| encrypt(&keys.secret, &PlainVec::new(&ctx, b).unwrap(), &mut rng).unwrap())
        .collect();

    let mut group = c.benchmark_group("mat_mul_full");
    group.sample_size(10);
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_with_input(BenchmarkId::new("uncached", name), &parallel, |b, &p| {
            b.iter(|| mat_mul_full(&ev, &pm, &blocks, None, p).unwrap())
        });
        let cache = DiagonalCache::new(usize::MAX);
        mat_mul_full(&ev, &pm, &blocks, Some(&cache), parallel).unwrap();
        group.bench_with_input(BenchmarkId::new("cached", name), &parallel, |b, &p| {
            b.iter(|| mat_mul_full(&ev, &pm, &blocks, Some(&cache), p).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, matmul);
criterion_main!(benches);
