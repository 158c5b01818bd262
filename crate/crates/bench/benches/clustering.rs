use criterion::{criterion_group, criterion_main, Criterion};
use resilience_bench::{fixture_matrix, fixture_workspace};
use resilience_core::clustering::{kmeans_fit, silhouette_score};

fn clustering(c: &mut Criterion) {
    let nm = fixture_matrix(&fixture_workspace());
    let mut g = c.benchmark_group("clustering");
    g.sample_size(20);
    g.bench_function("kmeans_k4_10_restarts", |b| b.iter(|| kmeans_fit(&nm, 4, 42, 10).unwrap()));
    let model = kmeans_fit(&nm, 4, 42, 10).unwrap();
    g.bench_function("silhouette_1461", |b| b.iter(|| silhouette_score(&nm, &model).unwrap()));
    g.finish();
}

criterion_group!(benches, clustering);
criterion_main!(benches);
