//! In-memory analysis stages: features, normalization and indices,
//! clustering, archetype labels and descriptive statistics.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::archetypes::{
    archetype_feature_stats, income_disparity, label_quadrants, ArchetypeAssignment, DisparityTable,
};
use crate::clustering::{kmeans_fit, sweep_k, ClusterModel, SweepRow};
use crate::error::{Error, Result};
use crate::features::{assemble_feature_matrix, compute_features, Exclusion, FeatureMatrix, FeatureRecord};
use crate::indices::{index_points, normalize_minmax, IndexSummary, NormalizedMatrix};
use crate::ingest::Workspace;
use crate::model::{validate_config, AnalysisConfig};

/// First stage a run executes; earlier stages are read back from disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Compute features from the workspace, then everything downstream.
    #[default]
    Features,
    /// Reuse the feature table of a previous run and re-cluster.
    Cluster,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(Stage::Features),
            "cluster" => Ok(Stage::Cluster),
            other => Err(Error::Config(format!("stage: unknown stage {other:?} (expected features or cluster)"))),
        }
    }
}

/// Everything a run computes.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// One record per registered CBG, in id order.
    pub records: Vec<FeatureRecord>,
    pub matrix: FeatureMatrix,
    pub exclusions: Vec<Exclusion>,
    pub normalized: NormalizedMatrix,
    pub indices: IndexSummary,
    pub model: ClusterModel,
    pub archetypes: ArchetypeAssignment,
    pub disparity: DisparityTable,
}

/// Wall-clock time per stage, in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings(pub Vec<(String, f64)>);

impl StageTimings {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(name, start.elapsed());
        out
    }

    pub fn record(&mut self, name: &str, elapsed: Duration) {
        self.0.push((name.to_string(), elapsed.as_secs_f64()));
    }
}

pub fn check_config(cfg: &AnalysisConfig) -> Result<()> {
    let violations = validate_config(cfg);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(violations.join("; ")))
    }
}

/// Feature records for every CBG of the workspace, sorted by id.
pub fn feature_stage(ws: &Workspace, cfg: &AnalysisConfig) -> Result<Vec<FeatureRecord>> {
    check_config(cfg)?;
    let mut records = compute_features(ws, cfg);
    records.sort_by(|a, b| a.vector.cbg.cmp(&b.vector.cbg));
    Ok(records)
}

/// Runs every stage after feature computation.
pub fn analyze_records(
    records: Vec<FeatureRecord>,
    ws: &Workspace,
    cfg: &AnalysisConfig,
    timings: &mut StageTimings,
) -> Result<Analysis> {
    check_config(cfg)?;
    let (matrix, exclusions) = assemble_feature_matrix(&records, cfg.k_clusters)?;
    let (normalized, indices) = timings.time("indices", || {
        let nm = normalize_minmax(&matrix);
        let idx = index_points(&nm);
        (nm, idx)
    });
    let model = timings.time("cluster", || kmeans_fit(&normalized, cfg.k_clusters, cfg.rng_seed, cfg.restarts))?;
    let (archetypes, disparity) = timings.time("archetypes", || {
        let a = label_quadrants(&indices, &model);
        let d = DisparityTable {
            features: archetype_feature_stats(&matrix, &a),
            income: income_disparity(&ws.income, &a),
        };
        (a, d)
    });
    let unit = 0.0..=1.0;
    if let Some(p) = indices
        .points
        .iter()
        .find(|p| !unit.contains(&p.risk_index) || !unit.contains(&p.resilience_index))
    {
        return Err(Error::Invariant(format!("indices of {} outside [0, 1]", p.cbg)));
    }
    Ok(Analysis {
        records,
        matrix,
        exclusions,
        normalized,
        indices,
        model,
        archetypes,
        disparity,
    })
}

/// Full analysis of a workspace.
pub fn analyze(ws: &Workspace, cfg: &AnalysisConfig) -> Result<(Analysis, StageTimings)> {
    let mut timings = StageTimings::default();
    let records = {
        let start = Instant::now();
        let r = feature_stage(ws, cfg)?;
        timings.record("features", start.elapsed());
        r
    };
    let analysis = analyze_records(records, ws, cfg, &mut timings)?;
    Ok((analysis, timings))
}

/// Normalized matrix of the complete CBGs, for k selection.
pub fn normalized_matrix(records: &[FeatureRecord], k_min: usize) -> Result<NormalizedMatrix> {
    let (matrix, _) = assemble_feature_matrix(records, k_min)?;
    Ok(normalize_minmax(&matrix))
}

/// Inertia and silhouette for each k of the range.
pub fn k_sweep(ws: &Workspace, cfg: &AnalysisConfig, k_min: usize, k_max: usize) -> Result<Vec<SweepRow>> {
    let records = feature_stage(ws, cfg)?;
    let nm = normalized_matrix(&records, k_min)?;
    sweep_k(&nm, k_min, k_max, cfg.rng_seed, cfg.restarts)
}
