//! Shared fixtures for the benchmarks.

use resilience_core::geometry::{LineString, Point, Polygon};
use resilience_core::indices::NormalizedMatrix;
use resilience_core::ingest::{ingest_dir, IngestOptions, Workspace};
use resilience_core::pipeline::analyze;
use resilience_core::synth::{generate_scenario, ScenarioSpec};
use resilience_core::AnalysisConfig;

/// Ingested workspace for the default synthetic fixture.
pub fn fixture_workspace() -> Workspace {
    let dir = tempfile::tempdir().expect("temp dir");
    generate_scenario(&ScenarioSpec::default_fixture(), dir.path()).expect("fixture generates");
    ingest_dir(dir.path(), &IngestOptions::default()).expect("fixture ingests")
}

/// Normalized feature matrix of the default fixture.
pub fn fixture_matrix(ws: &Workspace) -> NormalizedMatrix {
    analyze(ws, &AnalysisConfig::default()).expect("fixture analyzes").0.normalized
}

/// Regular polygon with `n` vertices and a square hole.
pub fn ring_polygon(n: usize) -> Polygon {
    let mut ring: Vec<Point> = (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Point::new(-95.3 + 0.05 * a.cos(), 29.7 + 0.05 * a.sin())
        })
        .collect();
    ring.push(ring[0]);
    let hole = vec![
        Point::new(-95.31, 29.69),
        Point::new(-95.29, 29.69),
        Point::new(-95.29, 29.71),
        Point::new(-95.31, 29.71),
        Point::new(-95.31, 29.69),
    ];
    Polygon::new(ring, vec![hole]).expect("valid polygon")
}

/// Zig-zag road crossing the polygon from [`ring_polygon`].
pub fn zigzag(vertices: usize) -> LineString {
    LineString::new(
        (0..vertices)
            .map(|i| {
                let t = i as f64 / (vertices - 1) as f64;
                Point::new(-95.37 + 0.14 * t, 29.7 + if i % 2 == 0 { 0.03 } else { -0.03 })
            })
            .collect(),
    )
    .expect("valid line")
}
