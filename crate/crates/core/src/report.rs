//! Output files of a run and the manifest that pins them.
//!
//! Everything written here is a pure function of the inputs, config and seed,
//! so two identical runs produce byte-identical files. Wall-clock timings go
//! to a separate file for that reason.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{SweepRow, RNG_DESCRIPTION};
use crate::error::{Error, Result};
use crate::features::{FeatureRecord, MissingReason};
use crate::geometry::Polygon;
use crate::indices::FeatureRange;
use crate::ingest::{Workspace, WORKSPACE_FILES};
use crate::model::{AnalysisConfig, CbgId, Feature, FeatureVector};
use crate::pipeline::{Analysis, StageTimings};

pub const FEATURES_CSV: &str = "features.csv";
pub const NORMALIZED_CSV: &str = "normalized.csv";
pub const CLUSTER_MODEL_JSON: &str = "cluster_model.json";
pub const ARCHETYPES_JSON: &str = "archetypes.json";
pub const BOXPLOT_CSV: &str = "boxplot_stats.csv";
pub const INCOME_CSV: &str = "income_disparity.csv";
pub const EXCLUSIONS_CSV: &str = "exclusions.csv";
pub const MANIFEST_JSON: &str = "run_manifest.json";
pub const CHOROPLETH_GEOJSON: &str = "choropleth.geojson";
pub const TIMINGS_JSON: &str = "run_timings.json";
pub const K_SWEEP_CSV: &str = "k_sweep.csv";

/// The nine files of a run, manifest last.
pub const OUTPUT_FILES: [&str; 9] = [
    FEATURES_CSV,
    NORMALIZED_CSV,
    CLUSTER_MODEL_JSON,
    ARCHETYPES_JSON,
    BOXPLOT_CSV,
    INCOME_CSV,
    EXCLUSIONS_CSV,
    CHOROPLETH_GEOJSON,
    MANIFEST_JSON,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub silhouette: f64,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: AnalysisConfig,
    pub rng: String,
    /// SHA-256 of every workspace file the run read.
    pub inputs: BTreeMap<String, String>,
    pub normalization: Vec<FeatureRange>,
    pub model: ModelSummary,
    /// SHA-256 of every other output file.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digests of the workspace files present in `dir`.
pub fn workspace_digests(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for name in WORKSPACE_FILES {
        let p = dir.join(name);
        if p.is_file() {
            out.insert(name.to_string(), digest_file(&p)?);
        }
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv buffer: {e}")))
}

fn censor_column(f: Feature) -> String {
    format!("censored_{}", f.name())
}

fn features_header() -> Vec<String> {
    let mut h = vec!["cbg_id".to_string()];
    h.extend(Feature::ALL.iter().map(|f| f.name().to_string()));
    h.extend(Feature::RECOVERY.iter().map(|f| censor_column(*f)));
    h
}

fn features_csv(records: &[FeatureRecord]) -> Result<Vec<u8>> {
    let header = features_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = records.iter().map(|r| {
        let v = &r.vector;
        let mut row = vec![v.cbg.to_string()];
        for f in Feature::ALL {
            row.push(match f {
                Feature::ClaimCount => v.claim_count.to_string(),
                _ => fmt_opt(v.get(f)),
            });
        }
        row.extend(v.censored_flags.iter().map(|c| c.to_string()));
        row
    });
    csv_bytes(&header, rows)
}

fn normalized_csv(a: &Analysis) -> Result<Vec<u8>> {
    let mut header = vec!["cbg_id"];
    header.extend(Feature::ALL.iter().map(|f| f.name()));
    header.extend(["risk_index", "resilience_index", "cluster", "archetype"]);
    let rows = a.normalized.cbgs.iter().enumerate().map(|(i, id)| {
        let mut row = vec![id.to_string()];
        row.extend(a.normalized.rows[i].iter().map(|x| x.to_string()));
        let p = &a.indices.points[i];
        let cluster = a.model.labels[i];
        row.push(p.risk_index.to_string());
        row.push(p.resilience_index.to_string());
        row.push(cluster.to_string());
        row.push(a.archetypes.clusters[cluster].label.as_str().to_string());
        row
    });
    csv_bytes(&header, rows)
}

fn boxplot_csv(a: &Analysis) -> Result<Vec<u8>> {
    let header = ["archetype", "feature", "count", "min", "q1", "median", "q3", "max", "mean", "outliers"];
    let rows = a.disparity.features.iter().map(|s| {
        let outliers: Vec<String> = s.outliers.iter().map(|x| x.to_string()).collect();
        vec![
            s.group.clone(),
            s.feature.name().to_string(),
            s.count.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
            s.mean.to_string(),
            outliers.join(";"),
        ]
    });
    csv_bytes(&header, rows)
}

fn income_csv(a: &Analysis) -> Result<Vec<u8>> {
    let header = ["archetype", "cbg_count", "income_count", "mean_income", "median_income"];
    let rows = a.disparity.income.iter().map(|r| {
        vec![
            r.group.clone(),
            r.cbg_count.to_string(),
            r.income_count.to_string(),
            fmt_opt(r.mean_income),
            fmt_opt(r.median_income),
        ]
    });
    csv_bytes(&header, rows)
}

fn exclusions_csv(a: &Analysis) -> Result<Vec<u8>> {
    let rows = a
        .exclusions
        .iter()
        .map(|e| vec![e.cbg.to_string(), e.feature.name().to_string(), e.reason.code().to_string()]);
    csv_bytes(&["cbg_id", "feature", "reason"], rows)
}

fn polygon_rings(p: &Polygon) -> Vec<Vec<Vec<f64>>> {
    p.rings()
        .map(|ring| ring.iter().map(|pt| vec![pt.lon, pt.lat]).collect())
        .collect()
}

fn choropleth(a: &Analysis, ws: &Workspace) -> Result<Vec<u8>> {
    let mut row_of: BTreeMap<&CbgId, usize> = BTreeMap::new();
    for (i, id) in a.normalized.cbgs.iter().enumerate() {
        row_of.insert(id, i);
    }
    let features = ws
        .cbgs
        .iter()
        .map(|(id, region)| {
            let value = if region.polygons.len() == 1 {
                geojson::Value::Polygon(polygon_rings(&region.polygons[0]))
            } else {
                geojson::Value::MultiPolygon(region.polygons.iter().map(polygon_rings).collect())
            };
            let mut props = serde_json::Map::new();
            let row = row_of.get(id).copied();
            let cluster = row.map(|i| a.model.labels[i]);
            props.insert("cbg_id".into(), id.to_string().into());
            props.insert("cluster".into(), cluster.into());
            props.insert(
                "archetype".into(),
                cluster.map(|c| a.archetypes.clusters[c].label.as_str()).into(),
            );
            props.insert("risk_index".into(), row.map(|i| a.indices.points[i].risk_index).into());
            props.insert(
                "resilience_index".into(),
                row.map(|i| a.indices.points[i].resilience_index).into(),
            );
            props.insert("median_income".into(), ws.income.get(id).copied().into());
            geojson::Feature {
                bbox: None,
                geometry: Some(geojson::Geometry::new(value)),
                id: None,
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    let fc = geojson::FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    };
    Ok(serde_json::to_vec(&fc)?)
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes the nine output files and returns the manifest.
pub fn write_outputs(
    out: &Path,
    a: &Analysis,
    ws: &Workspace,
    cfg: &AnalysisConfig,
    inputs: BTreeMap<String, String>,
) -> Result<RunManifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files: [(&str, Vec<u8>); 8] = [
        (FEATURES_CSV, features_csv(&a.records)?),
        (NORMALIZED_CSV, normalized_csv(a)?),
        (CLUSTER_MODEL_JSON, pretty(&a.model)?),
        (ARCHETYPES_JSON, pretty(&a.archetypes)?),
        (BOXPLOT_CSV, boxplot_csv(a)?),
        (INCOME_CSV, income_csv(a)?),
        (EXCLUSIONS_CSV, exclusions_csv(a)?),
        (CHOROPLETH_GEOJSON, choropleth(a, ws)?),
    ];
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &files {
        write_file(&out.join(name), bytes)?;
        outputs.insert(name.to_string(), sha256_hex(bytes));
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        rng: RNG_DESCRIPTION.to_string(),
        inputs,
        normalization: a.normalized.ranges.to_vec(),
        model: ModelSummary {
            k: a.model.k,
            seed: a.model.seed,
            restarts: a.model.restarts,
            inertia: a.model.inertia,
            iterations: a.model.iterations,
            silhouette: a.model.silhouette,
            cluster_sizes: a.model.cluster_sizes(),
        },
        outputs,
    };
    write_file(&out.join(MANIFEST_JSON), &pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn write_timings(out: &Path, timings: &StageTimings) -> Result<()> {
    let map: BTreeMap<&str, f64> = timings.0.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    write_file(&out.join(TIMINGS_JSON), &pretty(&map)?)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| vec![r.k.to_string(), r.inertia.to_string(), r.silhouette.to_string()]);
    write_file(path, &csv_bytes(&["k", "inertia", "silhouette"], rows)?)
}

fn parse_reason(code: &str) -> Option<MissingReason> {
    [
        MissingReason::NoData,
        MissingReason::UnusableBaseline,
        MissingReason::EmptyWindow,
        MissingReason::NoBuildingCount,
        MissingReason::Missing,
    ]
    .into_iter()
    .find(|r| r.code() == code)
}

fn bad(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Input(format!("{}: {what}", path.display()))
}

/// Rebuilds the feature records of a previous run from its feature table and
/// exclusion list.
pub fn read_feature_records(out: &Path) -> Result<Vec<FeatureRecord>> {
    let path = out.join(FEATURES_CSV);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let mut reader = csv::Reader::from_path(&path)?;
    if reader.headers()?.iter().ne(features_header().iter().map(String::as_str)) {
        return Err(bad(&path, "unexpected header"));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let cbg: CbgId = row[0].parse()?;
        let mut vector = FeatureVector::empty(cbg);
        for f in Feature::ALL {
            let cell = &row[1 + f.index()];
            if f == Feature::ClaimCount {
                vector.claim_count = cell.parse().map_err(|e| bad(&path, e))?;
            } else if !cell.is_empty() {
                vector.set(f, Some(cell.parse().map_err(|e| bad(&path, e))?));
            }
        }
        for slot in 0..4 {
            vector.censored_flags[slot] = row[1 + Feature::COUNT + slot].parse().map_err(|e| bad(&path, e))?;
        }
        records.push(FeatureRecord::from_vector(vector));
    }

    let path = out.join(EXCLUSIONS_CSV);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let mut by_id: BTreeMap<CbgId, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_id.insert(r.vector.cbg.clone(), i);
    }
    let mut reader = csv::Reader::from_path(&path)?;
    for row in reader.records() {
        let row = row?;
        let cbg: CbgId = row[0].parse()?;
        let feature: Feature = row[1].parse()?;
        let reason = parse_reason(&row[2]).ok_or_else(|| bad(&path, format!("unknown reason {}", &row[2])))?;
        if let Some(&i) = by_id.get(&cbg) {
            records[i].missing.insert(feature, reason);
        }
    }
    Ok(records)
}

/// Reads a manifest back.
pub fn read_manifest(out: &Path) -> Result<RunManifest> {
    let path = out.join(MANIFEST_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Prints a short human summary of a run.
pub fn summarize(a: &Analysis, mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{} CBGs clustered, {} excluded; k={} silhouette={:.4}",
        a.matrix.len(),
        a.records.len() - a.matrix.len(),
        a.model.k,
        a.model.silhouette
    )?;
    for c in &a.archetypes.clusters {
        writeln!(w, "  cluster {} ({} CBGs): {}", c.cluster, c.size, c.label.as_str())?;
    }
    Ok(())
}
