//! Quadrant labels for clusters and per-archetype descriptive statistics.
//!
//! A cluster is high-risk when the median risk index of its members is at
//! least the population median, and high-resilience likewise. Ties go to High.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::features::FeatureMatrix;
use crate::indices::IndexSummary;
use crate::model::{ArchetypeLabel, CbgId, Feature};
use crate::stats::{mean, median, quantile_sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArchetype {
    pub cluster: usize,
    pub label: ArchetypeLabel,
    pub size: usize,
    pub median_risk: Option<f64>,
    pub median_resilience: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeAssignment {
    pub global_median_risk: f64,
    pub global_median_resilience: f64,
    pub clusters: Vec<ClusterArchetype>,
    /// Archetype of every clustered CBG.
    #[serde(skip)]
    pub cbg_labels: BTreeMap<CbgId, ArchetypeLabel>,
}

impl ArchetypeAssignment {
    pub fn label_of_cluster(&self, cluster: usize) -> Option<ArchetypeLabel> {
        self.clusters.iter().find(|c| c.cluster == cluster).map(|c| c.label)
    }

    /// Distinct labels in use, sorted.
    pub fn labels(&self) -> Vec<ArchetypeLabel> {
        let mut v: Vec<_> = self.clusters.iter().map(|c| c.label).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Labels every cluster by comparing its median indices with the population medians.
pub fn label_quadrants(summary: &IndexSummary, model: &ClusterModel) -> ArchetypeAssignment {
    let mut members: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); model.k];
    let mut cbg_cluster = BTreeMap::new();
    for p in &summary.points {
        if let Some(&c) = model.assignments.get(&p.cbg) {
            members[c].0.push(p.risk_index);
            members[c].1.push(p.resilience_index);
            cbg_cluster.insert(p.cbg.clone(), c);
        }
    }
    let clusters: Vec<ClusterArchetype> = members
        .iter()
        .enumerate()
        .map(|(cluster, (risk, res))| {
            let (median_risk, median_resilience) = if risk.is_empty() {
                (None, None)
            } else {
                (Some(median(risk)), Some(median(res)))
            };
            let high_risk = median_risk.is_some_and(|r| r >= summary.global_median_risk);
            let high_res = median_resilience.is_some_and(|r| r >= summary.global_median_resilience);
            ClusterArchetype {
                cluster,
                label: ArchetypeLabel::from_levels(high_risk, high_res),
                size: risk.len(),
                median_risk,
                median_resilience,
            }
        })
        .collect();
    let cbg_labels = cbg_cluster
        .into_iter()
        .map(|(id, c)| (id, clusters[c].label))
        .collect();
    ArchetypeAssignment {
        global_median_risk: summary.global_median_risk,
        global_median_resilience: summary.global_median_resilience,
        clusters,
        cbg_labels,
    }
}

/// Group key for report rows: one archetype, or the whole population.
pub const ALL_GROUP: &str = "ALL";

/// The numbers a box plot needs for one (group, feature) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub group: String,
    pub feature: Feature,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Values beyond 1.5 IQR from the quartiles, ascending.
    pub outliers: Vec<f64>,
}

pub fn box_stats(group: &str, feature: Feature, values: &[f64]) -> BoxStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    BoxStats {
        group: group.to_string(),
        feature,
        count: sorted.len(),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        max: sorted.last().copied().unwrap_or(f64::NAN),
        mean: mean(&sorted),
        outliers: sorted.iter().copied().filter(|v| *v < lo || *v > hi).collect(),
    }
}

fn groups<'a>(
    cbgs: impl Iterator<Item = &'a CbgId>,
    assignment: &ArchetypeAssignment,
) -> BTreeMap<ArchetypeLabel, Vec<usize>> {
    let mut out: BTreeMap<ArchetypeLabel, Vec<usize>> = BTreeMap::new();
    for (i, id) in cbgs.enumerate() {
        if let Some(label) = assignment.cbg_labels.get(id) {
            out.entry(*label).or_default().push(i);
        }
    }
    out
}

/// Box-plot statistics of every raw feature, per archetype and for all CBGs.
pub fn archetype_feature_stats(matrix: &FeatureMatrix, assignment: &ArchetypeAssignment) -> Vec<BoxStats> {
    let by_label = groups(matrix.cbgs.iter(), assignment);
    let mut out = Vec::new();
    for (label, rows) in &by_label {
        for f in Feature::ALL {
            let values: Vec<f64> = rows.iter().map(|&i| matrix.rows[i][f.index()]).collect();
            out.push(box_stats(label.as_str(), f, &values));
        }
    }
    for f in Feature::ALL {
        let values: Vec<f64> = matrix.column(f).collect();
        out.push(box_stats(ALL_GROUP, f, &values));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeRow {
    pub group: String,
    pub cbg_count: usize,
    /// Member CBGs with a known median income.
    pub income_count: usize,
    pub mean_income: Option<f64>,
    pub median_income: Option<f64>,
}

fn income_row(group: &str, ids: &[&CbgId], income: &BTreeMap<CbgId, f64>) -> IncomeRow {
    let values: Vec<f64> = ids.iter().filter_map(|id| income.get(*id).copied()).collect();
    let (mean_income, median_income) = if values.is_empty() {
        (None, None)
    } else {
        (Some(mean(&values)), Some(median(&values)))
    };
    IncomeRow {
        group: group.to_string(),
        cbg_count: ids.len(),
        income_count: values.len(),
        mean_income,
        median_income,
    }
}

/// Mean and median of member CBGs' median household incomes, per archetype
/// and overall. CBGs without income count as members but not in the statistics.
pub fn income_disparity(income: &BTreeMap<CbgId, f64>, assignment: &ArchetypeAssignment) -> Vec<IncomeRow> {
    let mut by_label: BTreeMap<ArchetypeLabel, Vec<&CbgId>> = BTreeMap::new();
    for (id, label) in &assignment.cbg_labels {
        by_label.entry(*label).or_default().push(id);
    }
    let mut rows: Vec<IncomeRow> = by_label
        .iter()
        .map(|(label, ids)| income_row(label.as_str(), ids, income))
        .collect();
    let all: Vec<&CbgId> = assignment.cbg_labels.keys().collect();
    rows.push(income_row(ALL_GROUP, &all, income));
    rows
}

/// Descriptive per-archetype statistics: feature box plots and incomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityTable {
    pub features: Vec<BoxStats>,
    pub income: Vec<IncomeRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RiskResiliencePoint;

    fn id(i: usize) -> CbgId {
        format!("48201{i:07}").parse().unwrap()
    }

    fn setup(points: &[(f64, f64)], labels: &[usize], k: usize) -> (IndexSummary, ClusterModel) {
        let pts: Vec<RiskResiliencePoint> = points
            .iter()
            .enumerate()
            .map(|(i, (r, s))| RiskResiliencePoint {
                cbg: id(i),
                risk_index: *r,
                resilience_index: *s,
            })
            .collect();
        let risks: Vec<f64> = points.iter().map(|p| p.0).collect();
        let res: Vec<f64> = points.iter().map(|p| p.1).collect();
        let summary = IndexSummary {
            points: pts,
            global_median_risk: median(&risks),
            global_median_resilience: median(&res),
        };
        let model = ClusterModel {
            k,
            seed: 0,
            restarts: 1,
            centroids: vec![vec![0.0]; k],
            assignments: labels.iter().enumerate().map(|(i, l)| (id(i), *l)).collect(),
            inertia: 0.0,
            iterations: 0,
            silhouette: 0.0,
            labels: labels.to_vec(),
        };
        (summary, model)
    }

    #[test]
    fn four_planted_quadrants() {
        let points = [
            (0.8, 0.7),
            (0.82, 0.72),
            (0.8, 0.2),
            (0.81, 0.22),
            (0.2, 0.8),
            (0.22, 0.79),
            (0.1, 0.1),
            (0.12, 0.11),
        ];
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let (summary, model) = setup(&points, &labels, 4);
        let a = label_quadrants(&summary, &model);
        let got: Vec<_> = a.clusters.iter().map(|c| c.label).collect();
        assert_eq!(got, vec![ArchetypeLabel::HH, ArchetypeLabel::HL, ArchetypeLabel::LH, ArchetypeLabel::LL]);
    }

    #[test]
    fn median_tie_counts_as_high() {
        // Cluster 0 median risk equals the global median exactly.
        let points = [(0.5, 0.5), (0.5, 0.5), (0.2, 0.9), (0.9, 0.1), (0.5, 0.5)];
        let labels = [0, 0, 1, 2, 0];
        let (summary, model) = setup(&points, &labels, 3);
        assert_eq!(summary.global_median_risk, 0.5);
        let a = label_quadrants(&summary, &model);
        assert_eq!(a.clusters[0].label, ArchetypeLabel::HH);
    }

    #[test]
    fn box_stats_with_outlier() {
        let s = box_stats("HH", Feature::ClaimCount, &[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!((s.min, s.max), (1.0, 100.0));
        assert_eq!(s.mean, 22.0);

        let one = box_stats("LL", Feature::ClaimCount, &[7.5]);
        assert_eq!([one.min, one.q1, one.median, one.q3, one.max], [7.5; 5]);
        assert!(one.outliers.is_empty());
    }

    #[test]
    fn income_missing_for_a_whole_archetype() {
        let points = [(0.9, 0.9), (0.8, 0.8), (0.1, 0.1), (0.2, 0.2)];
        let labels = [0, 0, 1, 1];
        let (summary, model) = setup(&points, &labels, 2);
        let a = label_quadrants(&summary, &model);
        let income = BTreeMap::from([(id(0), 60_000.0), (id(1), 70_000.0)]);
        let rows = income_disparity(&income, &a);
        let hh = rows.iter().find(|r| r.group == "HH").unwrap();
        assert_eq!(hh.median_income, Some(65_000.0));
        let ll = rows.iter().find(|r| r.group == "LL").unwrap();
        assert_eq!((ll.cbg_count, ll.income_count, ll.median_income), (2, 0, None));
        let all = rows.iter().find(|r| r.group == ALL_GROUP).unwrap();
        assert_eq!(all.cbg_count, 4);
    }
}
