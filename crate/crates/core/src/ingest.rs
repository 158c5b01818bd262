//! Parsing and validation of the raw input datasets, plus the on-disk
//! workspace that downstream stages read instead of re-parsing.
//!
//! Row-level problems are rejected with a reason code and counted in the
//! [`IngestReport`]; structural problems (duplicate CBG ids, overlapping
//! stays for one device, unreadable files) abort with an error.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, Timelike};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CbgRegion, CbgTable, LineString, Point, Polygon};
use crate::model::{CbgId, DailySeries, MetricFamily, MetricKind};

pub const CBGS_FILE: &str = "cbgs.geojson";
pub const INCOME_FILE: &str = "income.csv";
pub const BUILDINGS_FILE: &str = "buildings.csv";
pub const POI_FILE: &str = "poi_visits.csv";
pub const CARDS_FILE: &str = "card_transactions.csv";
pub const SPEED_FILE: &str = "speed_tests.csv";
pub const STAYS_FILE: &str = "stays.csv";
pub const TRAFFIC_FILE: &str = "traffic.csv";
pub const ROADS_FILE: &str = "roads.geojson";
pub const CLAIMS_FILE: &str = "claims.csv";

/// Every file an input bundle must contain.
pub const INPUT_FILES: [&str; 10] = [
    CBGS_FILE,
    INCOME_FILE,
    BUILDINGS_FILE,
    POI_FILE,
    CARDS_FILE,
    SPEED_FILE,
    STAYS_FILE,
    TRAFFIC_FILE,
    ROADS_FILE,
    CLAIMS_FILE,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaySegment {
    pub device_id: String,
    pub home_cbg: CbgId,
    pub stay_cbg: CbgId,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl StaySegment {
    pub fn duration_minutes(&self) -> i64 {
        (self.end - self.start).num_minutes()
    }

    pub fn is_away(&self) -> bool {
        self.stay_cbg != self.home_cbg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReading {
    pub segment_id: String,
    pub timestamp: NaiveDateTime,
    /// `None` encodes a null speed report.
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimLocation {
    Point(Point),
    Cbg(CbgId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub location: ClaimLocation,
    pub damage_amount_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based row number within the file (header excluded).
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileReport {
    pub total_rows: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejections: Vec<Rejection>,
}

impl FileReport {
    fn accept(&mut self) {
        self.total_rows += 1;
        self.accepted += 1;
    }

    fn reject(&mut self, reason: impl Into<String>) {
        self.total_rows += 1;
        self.rejected += 1;
        self.rejections.push(Rejection {
            row: self.total_rows,
            reason: reason.into(),
        });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub cbgs_with_data: usize,
    pub cbgs_without_data: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: BTreeMap<String, FileReport>,
    /// Per dataset, how many registered CBGs it covers.
    pub coverage: BTreeMap<String, CoverageSummary>,
}

impl IngestReport {
    pub fn total_rejected(&self) -> u64 {
        self.files.values().map(|f| f.rejected).sum()
    }
}

/// Timestamp handling at ingest.
#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Offset of the study region's local time from UTC. Timestamps that carry
    /// an explicit offset are converted to this local time; naive ones are
    /// taken as already local.
    pub local_utc_offset_minutes: i32,
}

impl Default for IngestOptions {
    fn default() -> Self {
        // US Central daylight time, in effect over the default event windows.
        IngestOptions {
            local_utc_offset_minutes: -300,
        }
    }
}

fn parse_timestamp(raw: &str, opts: &IngestOptions) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        let local = FixedOffset::east_opt(opts.local_utc_offset_minutes * 60)?;
        return Some(dt.with_timezone(&local).naive_local());
    }
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M"))
        .ok()
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").ok()
}

fn parse_non_negative(raw: &str) -> std::result::Result<f64, &'static str> {
    let v: f64 = raw.trim().parse().map_err(|_| "unparseable number")?;
    if !v.is_finite() {
        Err("non-finite value")
    } else if v < 0.0 {
        Err("negative value")
    } else {
        Ok(v)
    }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Input(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            got,
            expected
        )));
    }
    Ok(reader)
}

/// Iterates CSV records, recording malformed lines (wrong field count,
/// invalid UTF-8) as rejections.
fn for_each_record(
    path: &Path,
    expected: &[&str],
    report: &mut FileReport,
    mut f: impl FnMut(&csv::StringRecord, &mut FileReport),
) -> Result<()> {
    let mut reader = open_csv(path, expected)?;
    for record in reader.records() {
        match record {
            Ok(r) if r.len() == expected.len() => f(&r, report),
            Ok(_) => report.reject("wrong field count"),
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => report.reject("malformed row"),
        }
    }
    Ok(())
}

fn read_feature_collection(path: &Path) -> Result<geojson::FeatureCollection> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let gj: geojson::GeoJson = text
        .parse()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    match gj {
        geojson::GeoJson::FeatureCollection(fc) => Ok(fc),
        _ => Err(Error::Input(format!("{}: expected a FeatureCollection", path.display()))),
    }
}

fn string_property(feature: &geojson::Feature, key: &str) -> Option<String> {
    match feature.property(key)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn to_point(pos: &[f64]) -> Point {
    Point::new(pos[0], pos[1])
}

fn polygon_from_rings(rings: &[Vec<Vec<f64>>]) -> Result<Polygon> {
    let mut rings = rings.iter().map(|ring| {
        if ring.iter().any(|p| p.len() < 2) {
            return Err(Error::Input("position with fewer than 2 coordinates".into()));
        }
        Ok(ring.iter().map(|p| to_point(p)).collect::<Vec<_>>())
    });
    let exterior = rings
        .next()
        .ok_or_else(|| Error::Input("polygon without rings".into()))??;
    let holes = rings.collect::<Result<Vec<_>>>()?;
    Polygon::new(exterior, holes)
}

/// Loads CBG footprints from a GeoJSON FeatureCollection whose features carry
/// a `cbg_id` property and Polygon or MultiPolygon geometry.
pub fn load_cbg_geometries(path: &Path) -> Result<(CbgTable, FileReport)> {
    let fc = read_feature_collection(path)?;
    let mut table = CbgTable::new();
    let mut report = FileReport::default();
    let mut seen = HashSet::new();
    for feature in &fc.features {
        let Some(raw_id) = string_property(feature, "cbg_id") else {
            report.reject("missing cbg_id property");
            continue;
        };
        let Ok(id) = CbgId::new(raw_id.clone()) else {
            report.reject("invalid cbg_id");
            continue;
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateCbg(id.to_string()));
        }
        let polygons = match feature.geometry.as_ref().map(|g| &g.value) {
            Some(geojson::Value::Polygon(rings)) => polygon_from_rings(rings).map(|p| vec![p]),
            Some(geojson::Value::MultiPolygon(polys)) => {
                polys.iter().map(|rings| polygon_from_rings(rings)).collect()
            }
            Some(_) => {
                report.reject("geometry is not a polygon");
                continue;
            }
            None => {
                report.reject("missing geometry");
                continue;
            }
        };
        match polygons.and_then(CbgRegion::new) {
            Ok(region) => {
                table.insert(id, region)?;
                report.accept();
            }
            Err(e) => report.reject(format!("invalid polygon: {e}")),
        }
    }
    Ok((table, report))
}

/// Loads `cbg_id,median_income`. Blank incomes are rejected and the CBG is
/// left out of the map.
pub fn load_income_table(path: &Path) -> Result<(BTreeMap<CbgId, f64>, FileReport)> {
    let mut map = BTreeMap::new();
    let mut report = FileReport::default();
    for_each_record(path, &["cbg_id", "median_income"], &mut report, |r, report| {
        let Ok(id) = CbgId::new(r[0].trim()) else {
            return report.reject("invalid cbg_id");
        };
        if r[1].trim().is_empty() {
            log::debug!("no median income for {id}");
            return report.reject("missing income");
        }
        match parse_non_negative(&r[1]) {
            Ok(_) if map.contains_key(&id) => report.reject("duplicate cbg_id"),
            Ok(v) => {
                map.insert(id, v);
                report.accept();
            }
            Err(reason) => report.reject(reason),
        }
    })?;
    Ok((map, report))
}

/// Loads `cbg_id,building_count`; counts must be non-negative integers.
pub fn load_building_counts(path: &Path) -> Result<(BTreeMap<CbgId, u64>, FileReport)> {
    let mut map = BTreeMap::new();
    let mut report = FileReport::default();
    for_each_record(path, &["cbg_id", "building_count"], &mut report, |r, report| {
        let Ok(id) = CbgId::new(r[0].trim()) else {
            return report.reject("invalid cbg_id");
        };
        match r[1].trim().parse::<u64>() {
            Ok(_) if map.contains_key(&id) => report.reject("duplicate cbg_id"),
            Ok(v) => {
                map.insert(id, v);
                report.accept();
            }
            Err(_) => report.reject("building_count is not a non-negative integer"),
        }
    })?;
    Ok((map, report))
}

/// Loads `date,cbg_id,category,value` rows of one metric family. Duplicate
/// (date, cbg, category) rows are summed for counts and averaged for speeds.
pub fn load_daily_series(path: &Path, family: MetricFamily) -> Result<(Vec<DailySeries>, FileReport)> {
    let mut acc: BTreeMap<(CbgId, MetricKind), BTreeMap<NaiveDate, (f64, u32)>> = BTreeMap::new();
    let mut report = FileReport::default();
    for_each_record(path, &["date", "cbg_id", "category", "value"], &mut report, |r, report| {
        let Some(date) = parse_date(&r[0]) else {
            return report.reject("unparseable date");
        };
        let Ok(id) = CbgId::new(r[1].trim()) else {
            return report.reject("invalid cbg_id");
        };
        let metric = match r[2].trim().parse::<MetricKind>() {
            Ok(m) if family.contains(m) => m,
            Ok(_) => return report.reject("category outside metric family"),
            Err(_) => return report.reject("unknown category"),
        };
        let value = match parse_non_negative(&r[3]) {
            Ok(v) => v,
            Err(reason) => return report.reject(reason),
        };
        let slot = acc.entry((id, metric)).or_default().entry(date).or_insert((0.0, 0));
        slot.0 += value;
        slot.1 += 1;
        report.accept();
    })?;
    let series = acc
        .into_iter()
        .map(|((cbg, metric), days)| {
            let values = days.into_iter().map(|(d, (sum, n))| {
                let v = if metric.is_additive() { sum } else { sum / f64::from(n) };
                (d, v)
            });
            DailySeries::from_values(cbg, metric, values)
        })
        .collect();
    Ok((series, report))
}

/// Loads `device_id,home_cbg,stay_cbg,start_ts,end_ts`, sorted by device then
/// start. Overlapping stays for one device abort the load.
pub fn load_stay_segments(path: &Path, opts: &IngestOptions) -> Result<(Vec<StaySegment>, FileReport)> {
    let mut segments = Vec::new();
    let mut report = FileReport::default();
    let header = ["device_id", "home_cbg", "stay_cbg", "start_ts", "end_ts"];
    for_each_record(path, &header, &mut report, |r, report| {
        let device_id = r[0].trim();
        if device_id.is_empty() {
            return report.reject("missing device_id");
        }
        let (Ok(home_cbg), Ok(stay_cbg)) = (CbgId::new(r[1].trim()), CbgId::new(r[2].trim())) else {
            return report.reject("invalid cbg_id");
        };
        let (Some(start), Some(end)) = (parse_timestamp(&r[3], opts), parse_timestamp(&r[4], opts)) else {
            return report.reject("unparseable timestamp");
        };
        if end <= start {
            return report.reject("end not after start");
        }
        segments.push(StaySegment {
            device_id: device_id.to_string(),
            home_cbg,
            stay_cbg,
            start,
            end,
        });
        report.accept();
    })?;
    segments.sort_by(|a, b| {
        (&a.device_id, a.start, a.end).cmp(&(&b.device_id, b.start, b.end))
    });
    for pair in segments.windows(2) {
        if pair[0].device_id == pair[1].device_id && pair[1].start < pair[0].end {
            return Err(Error::OverlappingStays(pair[0].device_id.clone()));
        }
    }
    Ok((segments, report))
}

/// Loads road geometries (`segment_id` LineStrings) and the 5-minute speed
/// readings that reference them. An empty speed cell is a null reading.
pub fn load_traffic(
    readings_path: &Path,
    roads_path: &Path,
    opts: &IngestOptions,
) -> Result<(Vec<TrafficReading>, BTreeMap<String, LineString>, FileReport, FileReport)> {
    let fc = read_feature_collection(roads_path)?;
    let mut roads = BTreeMap::new();
    let mut road_report = FileReport::default();
    for feature in &fc.features {
        let Some(id) = string_property(feature, "segment_id").filter(|s| !s.trim().is_empty()) else {
            road_report.reject("missing segment_id property");
            continue;
        };
        let line = match feature.geometry.as_ref().map(|g| &g.value) {
            Some(geojson::Value::LineString(pts)) if pts.iter().all(|p| p.len() >= 2) => {
                LineString::new(pts.iter().map(|p| to_point(p)).collect())
            }
            _ => {
                road_report.reject("geometry is not a line string");
                continue;
            }
        };
        match line {
            Ok(_) if roads.contains_key(&id) => road_report.reject("duplicate segment_id"),
            Ok(line) => {
                roads.insert(id, line);
                road_report.accept();
            }
            Err(e) => road_report.reject(format!("invalid line string: {e}")),
        }
    }

    let mut readings = Vec::new();
    let mut report = FileReport::default();
    for_each_record(readings_path, &["segment_id", "timestamp", "speed_mph"], &mut report, |r, report| {
        let segment_id = r[0].trim();
        if !roads.contains_key(segment_id) {
            return report.reject("unknown segment_id");
        }
        let Some(timestamp) = parse_timestamp(&r[1], opts) else {
            return report.reject("unparseable timestamp");
        };
        if timestamp.second() != 0 || timestamp.minute() % 5 != 0 || timestamp.nanosecond() != 0 {
            return report.reject("timestamp not on 5-minute grid");
        }
        let speed = if r[2].trim().is_empty() {
            None
        } else {
            match parse_non_negative(&r[2]) {
                Ok(v) => Some(v),
                Err(reason) => return report.reject(reason),
            }
        };
        readings.push(TrafficReading {
            segment_id: segment_id.to_string(),
            timestamp,
            speed,
        });
        report.accept();
    })?;
    readings.sort_by(|a, b| (&a.segment_id, a.timestamp).cmp(&(&b.segment_id, b.timestamp)));
    Ok((readings, roads, report, road_report))
}

/// Loads `claim_id,lat,lon,cbg_id,damage_amount_usd`; each claim is located
/// either by a point or by an explicit CBG id, never both.
pub fn load_claims(path: &Path) -> Result<(Vec<ClaimRecord>, FileReport)> {
    let mut claims = Vec::new();
    let mut report = FileReport::default();
    let header = ["claim_id", "lat", "lon", "cbg_id", "damage_amount_usd"];
    for_each_record(path, &header, &mut report, |r, report| {
        let claim_id = r[0].trim();
        if claim_id.is_empty() {
            return report.reject("missing claim_id");
        }
        let (lat, lon, cbg) = (r[1].trim(), r[2].trim(), r[3].trim());
        let has_point = !lat.is_empty() || !lon.is_empty();
        let location = match (has_point, cbg.is_empty()) {
            (true, false) => return report.reject("both point and cbg_id given"),
            (false, true) => return report.reject("no location"),
            (false, false) => match CbgId::new(cbg) {
                Ok(id) => ClaimLocation::Cbg(id),
                Err(_) => return report.reject("invalid cbg_id"),
            },
            (true, true) => match (lat.parse::<f64>(), lon.parse::<f64>()) {
                (Ok(la), Ok(lo)) if (-90.0..=90.0).contains(&la) && (-180.0..=180.0).contains(&lo) => {
                    ClaimLocation::Point(Point::new(lo, la))
                }
                _ => return report.reject("invalid coordinates"),
            },
        };
        let damage_amount_usd = match parse_non_negative(&r[4]) {
            Ok(v) => v,
            Err(reason) => return report.reject(reason),
        };
        claims.push(ClaimRecord {
            claim_id: claim_id.to_string(),
            location,
            damage_amount_usd,
        });
        report.accept();
    })?;
    claims.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    Ok((claims, report))
}

/// Parsed, validated inputs for one study.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workspace {
    pub cbgs: CbgTable,
    pub income: BTreeMap<CbgId, f64>,
    pub buildings: BTreeMap<CbgId, u64>,
    pub poi: Vec<DailySeries>,
    pub cards: Vec<DailySeries>,
    pub speed: Vec<DailySeries>,
    pub stays: Vec<StaySegment>,
    pub traffic: Vec<TrafficReading>,
    pub roads: BTreeMap<String, LineString>,
    pub claims: Vec<ClaimRecord>,
    pub report: IngestReport,
}

/// Workspace file names, one per dataset plus the report.
pub const WORKSPACE_FILES: [&str; 11] = [
    "cbgs.json",
    "income.json",
    "buildings.json",
    "poi_series.json",
    "card_series.json",
    "speed_series.json",
    "stays.json",
    "traffic.json",
    "roads.json",
    "claims.json",
    "ingest_report.json",
];

fn coverage<'a>(table: &CbgTable, covered: impl Iterator<Item = &'a CbgId>) -> CoverageSummary {
    let set: BTreeSet<&CbgId> = covered.filter(|id| table.contains(id)).collect();
    CoverageSummary {
        cbgs_with_data: set.len(),
        cbgs_without_data: table.len() - set.len(),
    }
}

/// Parses every input file of a bundle directory.
pub fn ingest_dir(inputs: &Path, opts: &IngestOptions) -> Result<Workspace> {
    for name in INPUT_FILES {
        let p = inputs.join(name);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }
    let path = |name: &str| -> PathBuf { inputs.join(name) };

    let ((geo, (poi, cards)), ((speed, stays), (traffic, (claims, (income, buildings))))) = rayon::join(
        || {
            rayon::join(
                || load_cbg_geometries(&path(CBGS_FILE)),
                || {
                    rayon::join(
                        || load_daily_series(&path(POI_FILE), MetricFamily::PoiVisits),
                        || load_daily_series(&path(CARDS_FILE), MetricFamily::CardTransactions),
                    )
                },
            )
        },
        || {
            rayon::join(
                || {
                    rayon::join(
                        || load_daily_series(&path(SPEED_FILE), MetricFamily::SpeedTests),
                        || load_stay_segments(&path(STAYS_FILE), opts),
                    )
                },
                || {
                    rayon::join(
                        || load_traffic(&path(TRAFFIC_FILE), &path(ROADS_FILE), opts),
                        || {
                            rayon::join(
                                || load_claims(&path(CLAIMS_FILE)),
                                || {
                                    (
                                        load_income_table(&path(INCOME_FILE)),
                                        load_building_counts(&path(BUILDINGS_FILE)),
                                    )
                                },
                            )
                        },
                    )
                },
            )
        },
    );

    let (cbgs, cbg_report) = geo?;
    let (poi, poi_report) = poi?;
    let (cards, card_report) = cards?;
    let (speed, speed_report) = speed?;
    let (stays, stay_report) = stays?;
    let (traffic, roads, traffic_report, road_report) = traffic?;
    let (claims, claim_report) = claims?;
    let (income, income_report) = income?;
    let (buildings, building_report) = buildings?;

    let mut report = IngestReport::default();
    for (name, r) in [
        (CBGS_FILE, cbg_report),
        (INCOME_FILE, income_report),
        (BUILDINGS_FILE, building_report),
        (POI_FILE, poi_report),
        (CARDS_FILE, card_report),
        (SPEED_FILE, speed_report),
        (STAYS_FILE, stay_report),
        (TRAFFIC_FILE, traffic_report),
        (ROADS_FILE, road_report),
        (CLAIMS_FILE, claim_report),
    ] {
        report.files.insert(name.to_string(), r);
    }
    let cov = [
        ("income", coverage(&cbgs, income.keys())),
        ("buildings", coverage(&cbgs, buildings.keys())),
        ("poi_visits", coverage(&cbgs, poi.iter().map(|s| &s.cbg))),
        ("card_transactions", coverage(&cbgs, cards.iter().map(|s| &s.cbg))),
        ("speed_tests", coverage(&cbgs, speed.iter().map(|s| &s.cbg))),
        ("stays", coverage(&cbgs, stays.iter().map(|s| &s.home_cbg))),
    ];
    for (name, c) in cov {
        report.coverage.insert(name.to_string(), c);
    }

    Ok(Workspace {
        cbgs,
        income,
        buildings,
        poi,
        cards,
        speed,
        stays,
        traffic,
        roads,
        claims,
        report,
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let p = dir.join(name);
    let bytes = serde_json::to_vec(value)?;
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(Error::MissingFile(p));
    }
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

impl Workspace {
    /// Writes one canonical JSON file per dataset plus `ingest_report.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(dir, "cbgs.json", &self.cbgs)?;
        write_json(dir, "income.json", &self.income)?;
        write_json(dir, "buildings.json", &self.buildings)?;
        write_json(dir, "poi_series.json", &self.poi)?;
        write_json(dir, "card_series.json", &self.cards)?;
        write_json(dir, "speed_series.json", &self.speed)?;
        write_json(dir, "stays.json", &self.stays)?;
        write_json(dir, "traffic.json", &self.traffic)?;
        write_json(dir, "roads.json", &self.roads)?;
        write_json(dir, "claims.json", &self.claims)?;
        let report = serde_json::to_vec_pretty(&self.report)?;
        let p = dir.join("ingest_report.json");
        fs::write(&p, report).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Workspace {
            cbgs: read_json(dir, "cbgs.json")?,
            income: read_json(dir, "income.json")?,
            buildings: read_json(dir, "buildings.json")?,
            poi: read_json(dir, "poi_series.json")?,
            cards: read_json(dir, "card_series.json")?,
            speed: read_json(dir, "speed_series.json")?,
            stays: read_json(dir, "stays.json")?,
            traffic: read_json(dir, "traffic.json")?,
            roads: read_json(dir, "roads.json")?,
            claims: read_json(dir, "claims.json")?,
            report: read_json(dir, "ingest_report.json")?,
        })
    }

    /// Every daily series of the workspace, for one metric.
    pub fn series(&self, metric: MetricKind) -> impl Iterator<Item = &DailySeries> {
        self.poi
            .iter()
            .chain(&self.cards)
            .chain(&self.speed)
            .filter(move |s| s.metric == metric)
    }
}
