use criterion::{criterion_group, criterion_main, Criterion};
use resilience_bench::fixture_workspace;
use resilience_core::features::compute_features;
use resilience_core::pipeline::analyze;
use resilience_core::AnalysisConfig;

fn pipeline(c: &mut Criterion) {
    let ws = fixture_workspace();
    let cfg = AnalysisConfig::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("features_1461_cbgs", |b| b.iter(|| compute_features(&ws, &cfg)));
    g.bench_function("full_analysis_1461_cbgs", |b| b.iter(|| analyze(&ws, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
