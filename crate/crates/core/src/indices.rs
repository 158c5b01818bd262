//! Min-max normalization and the composite risk and resilience indices.
//!
//! The risk index is the median of the seven normalized impact and
//! protective-action features. The resilience index is `1 - median` of the
//! four normalized recovery durations, so shorter recovery means higher
//! resilience and both indices stay in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::model::{CbgId, Feature, RiskResiliencePoint};
use crate::stats::median;

/// Observed range of one raw feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub feature: Feature,
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn is_constant(&self) -> bool {
        self.max == self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub cbgs: Vec<CbgId>,
    pub rows: Vec<[f64; Feature::COUNT]>,
    pub ranges: [FeatureRange; Feature::COUNT],
}

impl NormalizedMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Maps normalized values back to raw units with the stored ranges.
    /// Constant columns map back to their single value.
    pub fn denormalize(&self) -> Vec<[f64; Feature::COUNT]> {
        self.rows
            .iter()
            .map(|row| {
                let mut raw = [0.0; Feature::COUNT];
                for (j, r) in self.ranges.iter().enumerate() {
                    raw[j] = if r.is_constant() {
                        r.min
                    } else {
                        r.min + row[j] * (r.max - r.min)
                    };
                }
                raw
            })
            .collect()
    }
}

/// Rescales every column to `[0, 1]`; constant columns become 0.5.
pub fn normalize_minmax(m: &FeatureMatrix) -> NormalizedMatrix {
    let ranges = Feature::ALL.map(|f| {
        let (min, max) = m
            .column(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        FeatureRange { feature: f, min, max }
    });
    let rows = m
        .rows
        .iter()
        .map(|row| {
            let mut out = [0.0; Feature::COUNT];
            for (j, r) in ranges.iter().enumerate() {
                out[j] = if r.is_constant() {
                    0.5
                } else {
                    ((row[j] - r.min) / (r.max - r.min)).clamp(0.0, 1.0)
                };
            }
            out
        })
        .collect();
    NormalizedMatrix {
        cbgs: m.cbgs.clone(),
        rows,
        ranges,
    }
}

/// Median of the seven normalized risk features.
pub fn risk_index(row: &[f64; Feature::COUNT]) -> f64 {
    median(&Feature::RISK.map(|f| row[f.index()]))
}

/// `1 - median` of the four normalized recovery features.
pub fn resilience_index(row: &[f64; Feature::COUNT]) -> f64 {
    1.0 - median(&Feature::RECOVERY.map(|f| row[f.index()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub points: Vec<RiskResiliencePoint>,
    pub global_median_risk: f64,
    pub global_median_resilience: f64,
}

/// Both indices for every row plus their population medians.
pub fn index_points(nm: &NormalizedMatrix) -> IndexSummary {
    let points: Vec<RiskResiliencePoint> = nm
        .cbgs
        .iter()
        .zip(&nm.rows)
        .map(|(cbg, row)| RiskResiliencePoint {
            cbg: cbg.clone(),
            risk_index: risk_index(row),
            resilience_index: resilience_index(row),
        })
        .collect();
    let risks: Vec<f64> = points.iter().map(|p| p.risk_index).collect();
    let res: Vec<f64> = points.iter().map(|p| p.resilience_index).collect();
    IndexSummary {
        global_median_risk: median(&risks),
        global_median_resilience: median(&res),
        points,
    }
}
