//! Planar lon/lat geometry for the spatial joins: point-in-polygon
//! assignment of claims and clipping of road lines against CBG polygons.
//!
//! Topology is evaluated in the lon/lat plane; lengths are haversine
//! kilometers. A line's clipped length is the inside fraction of each
//! sub-segment's parameter range times that sub-segment's haversine length,
//! so clipped pieces of one line never sum to more than the whole.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CbgId;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Collinearity tolerance, in degrees.
pub const COLLINEAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub lon: f64,
    pub lat: f64,
}

impl Point {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Point { lon, lat }
    }

    fn sub(self, other: Point) -> (f64, f64) {
        (self.lon - other.lon, self.lat - other.lat)
    }

    fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.lon + (other.lon - self.lon) * t,
            self.lat + (other.lat - self.lat) * t,
        )
    }
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn dot(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

/// Axis-aligned bounding box in lon/lat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut b = BBox {
            min_lon: f64::INFINITY,
            min_lat: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
            max_lat: f64::NEG_INFINITY,
        };
        for p in points {
            b.min_lon = b.min_lon.min(p.lon);
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lon = b.max_lon.max(p.lon);
            b.max_lat = b.max_lat.max(p.lat);
        }
        b
    }

    pub fn contains(&self, p: Point) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_lon <= other.max_lon
            && other.min_lon <= self.max_lon
            && self.min_lat <= other.max_lat
            && other.min_lat <= self.max_lat
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min_lon: self.min_lon.min(other.min_lon),
            min_lat: self.min_lat.min(other.min_lat),
            max_lon: self.max_lon.max(other.max_lon),
            max_lat: self.max_lat.max(other.max_lat),
        }
    }
}

/// Shoelace signed area of a closed ring, in square degrees.
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].lon * w[1].lat - w[1].lon * w[0].lat)
        .sum::<f64>()
        / 2.0
}

/// Polygon with an exterior ring and optional holes. Rings are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        for ring in std::iter::once(&exterior).chain(holes.iter()) {
            if ring.len() < 4 {
                return Err(Error::Input("ring has fewer than 4 vertices".into()));
            }
            if ring.first() != ring.last() {
                return Err(Error::Input("ring is not closed".into()));
            }
            if ring.iter().any(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
                return Err(Error::Input("ring has non-finite coordinates".into()));
            }
        }
        if ring_signed_area(&exterior).abs() <= 0.0 {
            return Err(Error::Input("exterior ring has zero area".into()));
        }
        Ok(Polygon { exterior, holes })
    }

    /// Convenience constructor from an axis-aligned rectangle.
    pub fn rectangle(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self> {
        Polygon::new(
            vec![
                Point::new(min_lon, min_lat),
                Point::new(max_lon, min_lat),
                Point::new(max_lon, max_lat),
                Point::new(min_lon, max_lat),
                Point::new(min_lon, min_lat),
            ],
            Vec::new(),
        )
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.exterior)
    }

    /// Planar area in square degrees, holes subtracted.
    pub fn area(&self) -> f64 {
        ring_signed_area(&self.exterior).abs()
            - self.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineString {
    points: Vec<Point>,
}

impl LineString {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Input("line string needs at least 2 vertices".into()));
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("line string has repeated consecutive vertices".into()));
        }
        if points.iter().any(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
            return Err(Error::Input("line string has non-finite coordinates".into()));
        }
        Ok(LineString { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn reversed(&self) -> LineString {
        let mut points = self.points.clone();
        points.reverse();
        LineString { points }
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.points)
    }

    pub fn length_km(&self) -> f64 {
        self.points.windows(2).map(|w| haversine_km(w[0], w[1])).sum()
    }
}

/// Great-circle distance between two lon/lat points in kilometers.
pub fn haversine_km(a: Point, b: Point) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Inside,
    Boundary,
    Outside,
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let ab = b.sub(a);
    let ap = p.sub(a);
    let len = dot(ab, ab).sqrt();
    if len == 0.0 {
        return dot(ap, ap).sqrt() <= COLLINEAR_EPS;
    }
    if cross(ab, ap).abs() / len > COLLINEAR_EPS {
        return false;
    }
    let t = dot(ap, ab) / (len * len);
    let slack = COLLINEAR_EPS / len;
    (-slack..=1.0 + slack).contains(&t)
}

fn locate_in_ring(p: Point, ring: &[Point]) -> Location {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(p, a, b) {
            return Location::Boundary;
        }
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

/// True when `p` lies inside the exterior ring and outside every hole.
/// Points on any ring boundary count as inside.
pub fn point_in_polygon(p: Point, poly: &Polygon) -> bool {
    match locate_in_ring(p, &poly.exterior) {
        Location::Outside => false,
        Location::Boundary => true,
        Location::Inside => poly
            .holes
            .iter()
            .all(|h| locate_in_ring(p, h) != Location::Inside),
    }
}

/// Parameters along `a→b` where it meets any polygon edge.
fn edge_crossings(a: Point, b: Point, poly: &Polygon, out: &mut Vec<f64>) {
    let r = b.sub(a);
    let r_len2 = dot(r, r);
    let r_len = r_len2.sqrt();
    for ring in poly.rings() {
        for w in ring.windows(2) {
            let (c, d) = (w[0], w[1]);
            let s = d.sub(c);
            let ca = c.sub(a);
            let denom = cross(r, s);
            let s_len = dot(s, s).sqrt();
            if denom.abs() <= f64::EPSILON * r_len * s_len {
                // Parallel: only collinear overlaps contribute breakpoints.
                if cross(r, ca).abs() / r_len <= COLLINEAR_EPS {
                    for q in [c, d] {
                        let t = dot(q.sub(a), r) / r_len2;
                        if (0.0..=1.0).contains(&t) {
                            out.push(t);
                        }
                    }
                }
                continue;
            }
            let t = cross(ca, s) / denom;
            let u = cross(ca, r) / denom;
            let t_slack = COLLINEAR_EPS / r_len;
            let u_slack = COLLINEAR_EPS / s_len;
            if (-t_slack..=1.0 + t_slack).contains(&t) && (-u_slack..=1.0 + u_slack).contains(&u) {
                out.push(t.clamp(0.0, 1.0));
            }
        }
    }
}

/// Fraction of the segment `a→b` (by parameter) lying inside `poly`.
fn inside_fraction(a: Point, b: Point, poly: &Polygon, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.push(0.0);
    scratch.push(1.0);
    edge_crossings(a, b, poly, scratch);
    scratch.sort_by(f64::total_cmp);
    scratch.dedup();
    let mut inside = 0.0;
    for w in scratch.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= 0.0 {
            continue;
        }
        if point_in_polygon(a.lerp(b, 0.5 * (t0 + t1)), poly) {
            inside += t1 - t0;
        }
    }
    inside.min(1.0)
}

/// Haversine length (km) of the portions of `line` inside `poly`.
pub fn clip_line_length(line: &LineString, poly: &Polygon) -> f64 {
    if !line.bbox().intersects(&poly.bbox()) {
        return 0.0;
    }
    let mut scratch = Vec::new();
    line.points
        .windows(2)
        .map(|w| {
            let frac = inside_fraction(w[0], w[1], poly, &mut scratch);
            if frac == 0.0 {
                0.0
            } else {
                frac * haversine_km(w[0], w[1])
            }
        })
        .sum()
}

/// One CBG's footprint: one or more polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgRegion {
    pub polygons: Vec<Polygon>,
    pub bbox: BBox,
}

impl CbgRegion {
    pub fn new(polygons: Vec<Polygon>) -> Result<Self> {
        let mut iter = polygons.iter().map(Polygon::bbox);
        let first = iter
            .next()
            .ok_or_else(|| Error::Input("region has no polygons".into()))?;
        let bbox = iter.fold(first, |acc, b| acc.union(&b));
        Ok(CbgRegion { polygons, bbox })
    }

    pub fn contains(&self, p: Point) -> bool {
        self.bbox.contains(p) && self.polygons.iter().any(|poly| point_in_polygon(p, poly))
    }

    pub fn clip_length(&self, line: &LineString) -> f64 {
        if !self.bbox.intersects(&line.bbox()) {
            return 0.0;
        }
        self.polygons.iter().map(|poly| clip_line_length(line, poly)).sum()
    }
}

/// Registry of CBG footprints, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CbgTable {
    regions: BTreeMap<CbgId, CbgRegion>,
}

impl CbgTable {
    pub fn new() -> Self {
        CbgTable::default()
    }

    pub fn insert(&mut self, id: CbgId, region: CbgRegion) -> Result<()> {
        if self.regions.contains_key(&id) {
            return Err(Error::DuplicateCbg(id.to_string()));
        }
        self.regions.insert(id, region);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, id: &CbgId) -> Option<&CbgRegion> {
        self.regions.get(id)
    }

    pub fn contains(&self, id: &CbgId) -> bool {
        self.regions.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &CbgId> {
        self.regions.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CbgId, &CbgRegion)> {
        self.regions.iter()
    }
}

/// Assigns each point to the CBG containing it. A point on a border shared
/// by several CBGs goes to the lexicographically smallest id.
pub fn assign_points(points: &[Point], table: &CbgTable) -> Vec<Option<CbgId>> {
    use rayon::prelude::*;
    points
        .par_iter()
        .map(|p| {
            table
                .iter()
                .find(|(_, region)| region.contains(*p))
                .map(|(id, _)| id.clone())
        })
        .collect()
}
