//! Brute-force reference implementations. None of these call into the
//! library code they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use resilience_core::geometry::{haversine_km, LineString, Point, Polygon};

/// Winding number of `ring` around `p`; rings are closed.
pub fn winding_number(p: Point, ring: &[Point]) -> i32 {
    let is_left = |a: Point, b: Point| (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
    let mut wn = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.lat <= p.lat {
            if b.lat > p.lat && is_left(a, b) > 0.0 {
                wn += 1;
            }
        } else if b.lat <= p.lat && is_left(a, b) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

pub fn winding_inside(p: Point, poly: &Polygon) -> bool {
    winding_number(p, poly.exterior()) != 0 && poly.holes().iter().all(|h| winding_number(p, h) == 0)
}

/// Jittered-stratified estimate of the clipped length: every segment gets a
/// share of `samples` proportional to its length, one uniform draw per stratum.
pub fn mc_clip_length(line: &LineString, poly: &Polygon, samples: usize, rng: &mut impl Rng) -> f64 {
    let pts = line.points();
    let lengths: Vec<f64> = pts.windows(2).map(|w| haversine_km(w[0], w[1])).collect();
    let total: f64 = lengths.iter().sum();
    let mut est = 0.0;
    for (w, len) in pts.windows(2).zip(&lengths) {
        let n = ((samples as f64 * len / total).round() as usize).max(1);
        let mut hits = 0usize;
        for j in 0..n {
            let t = (j as f64 + rng.random::<f64>()) / n as f64;
            let q = Point::new(w[0].lon + t * (w[1].lon - w[0].lon), w[0].lat + t * (w[1].lat - w[0].lat));
            if winding_inside(q, poly) {
                hits += 1;
            }
        }
        est += len * hits as f64 / n as f64;
    }
    est
}

/// Star-shaped ring around `center` with radii in `[rmin, rmax]`, closed.
pub fn star_ring(center: Point, rmin: f64, rmax: f64, vertices: usize, rng: &mut impl Rng) -> Vec<Point> {
    let mut angles: Vec<f64> = (0..vertices).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    let mut ring: Vec<Point> = angles
        .iter()
        .map(|a| {
            let r = rng.random_range(rmin..=rmax);
            Point::new(center.lon + r * a.cos(), center.lat + r * a.sin())
        })
        .collect();
    ring.push(ring[0]);
    ring
}

/// Random star polygon, with a hole about half the time.
pub fn random_polygon(rng: &mut impl Rng) -> Polygon {
    let center = Point::new(rng.random_range(-96.0..-94.0), rng.random_range(29.0..30.5));
    let r = rng.random_range(0.01..0.08);
    let exterior = star_ring(center, 0.5 * r, r, rng.random_range(5..24), rng);
    let holes = if rng.random_bool(0.5) {
        let off = Point::new(center.lon + 0.05 * r, center.lat - 0.05 * r);
        vec![star_ring(off, 0.1 * r, 0.3 * r, rng.random_range(3..10), rng)]
    } else {
        Vec::new()
    };
    Polygon::new(exterior, holes).expect("star polygon is valid")
}

/// Polyline that wanders through the polygon's bounding box and crosses near its center.
pub fn random_line_through(poly: &Polygon, rng: &mut impl Rng) -> LineString {
    let bb = poly.bbox();
    let (w, h) = (bb.max_lon - bb.min_lon, bb.max_lat - bb.min_lat);
    let mut pick = || {
        Point::new(
            bb.min_lon + rng.random_range(-0.5..1.5) * w,
            bb.min_lat + rng.random_range(-0.5..1.5) * h,
        )
    };
    let n = 2 + (pick().lon.to_bits() % 4) as usize;
    let mut pts: Vec<Point> = (0..n).map(|_| pick()).collect();
    let center = Point::new(0.5 * (bb.min_lon + bb.max_lon), 0.5 * (bb.min_lat + bb.max_lat));
    pts.insert(1, center);
    LineString::new(pts).expect("distinct random vertices")
}

/// Sum of squared distances to cluster means, for any labelling.
pub fn sse(data: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = data[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = data.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..dim)
            .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
            .collect();
        for p in members {
            total += p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total
}

/// Minimum inertia over every 2-partition of the rows.
pub fn best_two_partition(data: &[Vec<f64>]) -> f64 {
    let n = data.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        best = best.min(sse(data, &labels, 2));
    }
    best
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Textbook silhouette: singletons score 0.
pub fn silhouette(data: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = data.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut by_cluster: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for j in 0..n {
            if i != j {
                let e = by_cluster.entry(labels[j]).or_insert((0.0, 0));
                e.0 += dist(&data[i], &data[j]);
                e.1 += 1;
            }
        }
        let Some(&(own_sum, own_n)) = by_cluster.get(&labels[i]) else {
            continue;
        };
        let a = own_sum / own_n as f64;
        let b = by_cluster
            .iter()
            .filter(|(c, _)| **c != labels[i])
            .map(|(_, (s, m))| s / *m as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// Adjusted Rand index from explicit pair counting.
pub fn pairwise_ari<A: PartialEq, B: PartialEq>(x: &[A], y: &[B]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * (ss * dd - sd * ds) / denom
    }
}

/// Trailing mean (or sum) of `100 (v - b) / b` over the last `window` calendar days.
pub fn trailing(values: &BTreeMap<NaiveDate, f64>, b: f64, window: i64, day: NaiveDate, sum: bool) -> Option<f64> {
    let picked: Vec<f64> = (0..window)
        .filter_map(|back| values.get(&(day - Duration::days(back))))
        .map(|v| 100.0 * (v - b) / b)
        .collect();
    if picked.is_empty() {
        return None;
    }
    let s: f64 = picked.iter().sum();
    Some(if sum { s } else { s / picked.len() as f64 })
}

/// One minute-aligned stay of a device.
#[derive(Debug, Clone)]
pub struct Stay {
    pub device: String,
    pub home: String,
    pub place: String,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

/// Evacuation rate per (home, day) by walking every minute of every device-day.
pub fn minute_level_evacuation(stays: &[Stay]) -> BTreeMap<(String, NaiveDate), f64> {
    let mut devices: BTreeMap<&str, Vec<&Stay>> = BTreeMap::new();
    for s in stays {
        devices.entry(&s.device).or_default().push(s);
    }
    let mut counts: BTreeMap<(String, NaiveDate), (u32, u32)> = BTreeMap::new();
    for segs in devices.values() {
        let first = segs.iter().map(|s| s.start.date()).min().unwrap();
        let last = segs.iter().map(|s| s.end.date()).max().unwrap();
        let mut day = first;
        while day <= last {
            let midnight = day.and_hms_opt(0, 0, 0).unwrap();
            let mut covered = 0;
            let mut away = false;
            for m in 0..1440 {
                let t = midnight + Duration::minutes(m);
                for s in segs {
                    if s.start <= t && t < s.end {
                        covered += 1;
                        if s.place != s.home && (s.end - s.start).num_minutes() >= 1440 {
                            away = true;
                        }
                    }
                }
            }
            if covered >= 240 {
                let c = counts.entry((segs[0].home.clone(), day)).or_insert((0, 0));
                c.0 += 1;
                c.1 += u32::from(away);
            }
            day = day.succ_opt().unwrap();
        }
    }
    counts
        .into_iter()
        .map(|(key, (q, e))| (key, f64::from(e) / f64::from(q)))
        .collect()
}

/// Non-overlapping minute-aligned stays for `devices` devices homed in `homes`.
pub fn random_stays(devices: usize, homes: &[String], places: &[String], days: i64, rng: &mut impl Rng) -> Vec<Stay> {
    let origin = NaiveDate::from_ymd_opt(2017, 8, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let end = origin + Duration::days(days);
    let mut out = Vec::new();
    for d in 0..devices {
        let home = homes[rng.random_range(0..homes.len())].clone();
        let mut t = origin + Duration::minutes(rng.random_range(0..1440));
        while t < end {
            let len = Duration::minutes(rng.random_range(30..4 * 1440));
            let place = if rng.random_bool(0.5) {
                home.clone()
            } else {
                places[rng.random_range(0..places.len())].clone()
            };
            out.push(Stay {
                device: format!("dev{d:04}"),
                home: home.clone(),
                place,
                start: t,
                end: t + len,
            });
            t = t + len + Duration::minutes(rng.random_range(0..900));
        }
    }
    out
}
