//! Deterministic k-means over the normalized feature matrix.
//!
//! Seeding is k-means++ driven by a SplitMix64 stream. Uniform draws are
//! `(next_u64 >> 11) * 2^-53`, so a given seed reproduces the same fit on any
//! platform. Lloyd iterations run until the assignment reaches a fixpoint or
//! [`MAX_ITERATIONS`]. Clusters that fall empty are re-seeded at the point
//! farthest from its centroid. Final labels are renumbered by ascending
//! lexicographic centroid order, so they depend on the data and not on the seed.
//!
//! Per-point work is parallel, but every reduction runs sequentially in row
//! order. Results are therefore bit-identical for any worker count.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::NormalizedMatrix;
use crate::model::CbgId;

pub const MAX_ITERATIONS: usize = 300;

/// Name of the seeding RNG, recorded in run manifests.
pub const RNG_DESCRIPTION: &str =
    "splitmix64 (Steele, Lea, Flood 2014); uniform = (next_u64 >> 11) * 2^-53";

fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `count` sub-seeds derived from `seed`.
pub fn derive_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp<T: AsRef<[f64]>>(data: &[T], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let n = data.len();
    let pick = |u: f64| ((u * n as f64) as usize).min(n - 1);
    let mut centroids = vec![data[pick(uniform(rng))].as_ref().to_vec()];
    let mut d2: Vec<f64> = data
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = uniform(rng) * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.unwrap_or_else(|| pick(uniform(rng)))
        } else {
            pick(uniform(rng))
        };
        let c = data[idx].as_ref().to_vec();
        for (i, p) in data.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Raw result of one seeded k-means run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

fn assign<T: AsRef<[f64]> + Sync>(data: &[T], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = data.par_iter().map(|p| nearest(p.as_ref(), centroids)).collect();
    let inertia = pairs.iter().map(|(_, d)| d).sum();
    (pairs.into_iter().map(|(j, _)| j).collect(), inertia)
}

fn update_centroids<T: AsRef<[f64]>>(data: &[T], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in data.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            // Re-seed at the point farthest from its own centroid, taken from a
            // cluster that can spare it.
            let mut best: Option<(usize, f64)> = None;
            for (i, (p, &l)) in data.iter().zip(labels).enumerate() {
                if counts[l] < 2 {
                    continue;
                }
                let d = squared_distance(p.as_ref(), &centroids[l]);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                counts[labels[i]] -= 1;
                counts[j] += 1;
                centroids[j] = data[i].as_ref().to_vec();
            }
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Renumbers clusters by ascending lexicographic centroid order.
fn relabel_canonically(fit: &mut KMeansFit) {
    let k = fit.centroids.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lex_cmp(&fit.centroids[a], &fit.centroids[b]).then(a.cmp(&b)));
    let mut new_of_old = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        new_of_old[old] = new;
    }
    fit.centroids = order.iter().map(|&old| fit.centroids[old].clone()).collect();
    for l in &mut fit.labels {
        *l = new_of_old[*l];
    }
}

/// One seeded k-means++ / Lloyd run on arbitrary rows.
pub fn fit_once<T: AsRef<[f64]> + Sync>(data: &[T], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || data.len() < k {
        return Err(Error::InsufficientData(format!(
            "k-means needs at least k = {k} rows, got {}",
            data.len()
        )));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut centroids = kmeans_pp(data, k, &mut rng);
    let (mut labels, mut inertia) = assign(data, &centroids);
    // Centroid means carry rounding error on the order of eps * |x|, so an
    // "increase" below this slack is noise rather than a broken update.
    let slack = 1e-24 * data.iter().flat_map(|p| p.as_ref()).map(|v| v * v).sum::<f64>();
    let mut trace = vec![inertia];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        update_centroids(data, &labels, &mut centroids);
        let (new_labels, new_inertia) = assign(data, &centroids);
        if new_inertia > inertia + 1e-12 * inertia + slack {
            return Err(Error::Invariant(format!(
                "k-means inertia increased from {inertia} to {new_inertia} at iteration {iterations}"
            )));
        }
        trace.push(new_inertia);
        inertia = new_inertia;
        let converged = new_labels == labels;
        labels = new_labels;
        if converged {
            break;
        }
    }
    let mut fit = KMeansFit {
        centroids,
        labels,
        inertia,
        iterations,
        inertia_trace: trace,
    };
    relabel_canonically(&mut fit);
    Ok(fit)
}

/// Best of `restarts` runs by inertia, each with a sub-seed derived from `seed`.
/// Ties keep the earliest run.
pub fn fit_best<T: AsRef<[f64]> + Sync>(data: &[T], k: usize, seed: u64, restarts: usize) -> Result<KMeansFit> {
    let seeds = derive_seeds(seed, restarts.max(1));
    let fits: Vec<Result<KMeansFit>> = seeds.par_iter().map(|s| fit_once(data, k, *s)).collect();
    let mut best: Option<KMeansFit> = None;
    for fit in fits {
        let fit = fit?;
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<CbgId, usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub silhouette: f64,
    /// Cluster index per matrix row.
    #[serde(skip)]
    pub labels: Vec<usize>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Fits k-means to the normalized matrix and scores it with the silhouette.
pub fn kmeans_fit(nm: &NormalizedMatrix, k: usize, seed: u64, restarts: usize) -> Result<ClusterModel> {
    let fit = fit_best(&nm.rows, k, seed, restarts)?;
    let silhouette = if k >= 2 {
        silhouette_from_labels(&nm.rows, &fit.labels, k)?
    } else {
        0.0
    };
    Ok(ClusterModel {
        k,
        seed,
        restarts: restarts.max(1),
        assignments: nm.cbgs.iter().cloned().zip(fit.labels.iter().copied()).collect(),
        centroids: fit.centroids,
        inertia: fit.inertia,
        iterations: fit.iterations,
        silhouette,
        labels: fit.labels,
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Mean silhouette of a labelled data set. Points in singleton clusters
/// score 0, as do points whose intra- and nearest-cluster distances are both 0.
pub fn silhouette_from_labels<T: AsRef<[f64]> + Sync>(data: &[T], labels: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Input(format!("silhouette needs k >= 2, got {k}")));
    }
    if data.len() != labels.len() || labels.iter().any(|&l| l >= k) {
        return Err(Error::Input("labels do not match the data".into()));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let scores: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let pi = data[i].as_ref();
            for (j, p) in data.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += euclidean(pi, p.as_ref());
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Silhouette of a fitted model over the matrix it was fitted on.
pub fn silhouette_score(nm: &NormalizedMatrix, model: &ClusterModel) -> Result<f64> {
    silhouette_from_labels(&nm.rows, &model.labels, model.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

/// One fit per k in `k_min..=k_max`, each with its own sub-seed.
pub fn sweep_k(nm: &NormalizedMatrix, k_min: usize, k_max: usize, seed: u64, restarts: usize) -> Result<Vec<SweepRow>> {
    if k_min < 2 || k_max < k_min {
        return Err(Error::Input(format!("invalid k range {k_min}..{k_max}")));
    }
    if k_max >= nm.len() {
        return Err(Error::InsufficientData(format!(
            "k range up to {k_max} needs more than {} rows",
            nm.len()
        )));
    }
    let seeds = derive_seeds(seed, k_max - k_min + 1);
    (k_min..=k_max)
        .zip(seeds)
        .map(|(k, s)| {
            let model = kmeans_fit(nm, k, s, restarts)?;
            Ok(SweepRow {
                k,
                inertia: model.inertia,
                silhouette: model.silhouette,
            })
        })
        .collect()
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_do_not_trip_the_inertia_guard() {
        let data: Vec<Vec<f64>> = (0..6).map(|i| vec![if i < 3 { 0.1 } else { 0.7 }, 0.3, 1.0 / 3.0]).collect();
        let fit = fit_once(&data, 2, 5).unwrap();
        assert!(fit.inertia < 1e-20);
    }

    fn blobs() -> Vec<Vec<f64>> {
        let mut v = Vec::new();
        for (cx, cy) in [(0.1, 0.1), (0.9, 0.9)] {
            for i in 0..10 {
                let t = i as f64 * 0.001;
                v.push(vec![cx + t, cy - t]);
            }
        }
        v
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let fit = fit_once(&data, 1, 7).unwrap();
        assert_eq!(fit.centroids[0], vec![2.0, 4.0]);
        let total_var = (4.0 + 0.0 + 4.0) + (9.0 + 1.0 + 16.0);
        assert!((fit.inertia - total_var).abs() < 1e-12);
    }

    #[test]
    fn separates_two_blobs_and_relabels_canonically() {
        let data = blobs();
        for seed in 0..5 {
            let fit = fit_once(&data, 2, seed).unwrap();
            assert!(fit.labels[..10].iter().all(|&l| l == 0));
            assert!(fit.labels[10..].iter().all(|&l| l == 1));
            assert!(fit.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
    }

    #[test]
    fn too_few_rows() {
        let data = vec![vec![0.0]];
        assert!(matches!(fit_once(&data, 2, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let data = vec![vec![1.0, 1.0]; 6];
        let fit = fit_once(&data, 3, 11).unwrap();
        assert_eq!(fit.inertia, 0.0);
        assert_eq!(fit.labels.len(), 6);
    }

    #[test]
    fn silhouette_separated_and_degenerate() {
        let data = blobs();
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        assert!(silhouette_from_labels(&data, &labels, 2).unwrap() > 0.9);

        let same = vec![vec![0.5, 0.5]; 6];
        let split = vec![0, 0, 0, 1, 1, 1];
        assert_eq!(silhouette_from_labels(&same, &split, 2).unwrap(), 0.0);
        assert!(silhouette_from_labels(&same, &split, 1).is_err());
    }

    #[test]
    fn ari_identity_and_permutation() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a), 1.0);
        assert_eq!(adjusted_rand_index(&a, &[2, 2, 0, 0, 1, 1]), 1.0);
        assert!(adjusted_rand_index(&a, &[0, 1, 2, 0, 1, 2]) < 0.0);
    }

    #[test]
    fn derived_seeds_are_stable() {
        assert_eq!(derive_seeds(42, 3), derive_seeds(42, 3));
        assert_ne!(derive_seeds(42, 2), derive_seeds(43, 2));
    }
}
