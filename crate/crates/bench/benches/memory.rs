use arcmem_bench::{random_rows, random_store, unit_vector};
use arcmem_core::memory::analytics::project_rows_3d;
use arcmem_core::memory::{EpisodeBound, Query, QueryFilter};
use arcmem_core::EpisodeKey;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn query_similar(c: &mut Criterion) {
    let mut group = c.benchmark_group("query_similar");
    for n in [1_000, 10_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = random_store(&mut rng, n, 256);
        let q = unit_vector(&mut rng, 256);
        group.bench_with_input(BenchmarkId::new("k10", n), &n, |b, _| {
            b.iter(|| store.query_similar(Query::Vector(black_box(&q)), 10, &QueryFilter::default(), None))
        });
        let before = QueryFilter {
            max_episode: Some(EpisodeBound::Before(EpisodeKey::new(1, 6).unwrap())),
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::new("k10_before_e06", n), &n, |b, _| {
            b.iter(|| store.query_similar(Query::Vector(black_box(&q)), 10, &before, None))
        });
    }
    group.finish();
}

fn pca(c: &mut Criterion) {
    let mut group = c.benchmark_group("pca_3d");
    for (n, d) in [(200, 256), (1_000, 256)] {
        let rows = random_rows(&mut ChaCha8Rng::seed_from_u64(2), n, d);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{d}")), &rows, |b, rows| {
            b.iter(|| project_rows_3d(black_box(rows)))
        });
    }
    group.finish();
}

criterion_group!(benches, query_similar, pca);
criterion_main!(benches);
