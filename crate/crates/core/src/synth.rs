//! Synthetic input bundles with planted archetypes.
//!
//! Every feature is planted by working backwards through its formula, so the
//! real feature code recovers the planted value:
//!
//! * preparedness: pharmacy and gas visits peak on a chosen day of the
//!   preparedness window;
//! * evacuation: one device is away for the whole baseline, `m` devices leave
//!   for three days after landfall, so the feature is `m - 1`;
//! * flooded roads: horizontal segments of known haversine length inside the
//!   cell carry null speed readings;
//! * claims: points strictly inside the cell with integer-dollar amounts;
//! * telecom: a flat speed series with one dip in the minimum window;
//! * recovery: visits collapse at landfall and rebound on day `D` just enough
//!   for the seven-day rolling mean to cross the threshold that day.
//!
//! Dates follow [`AnalysisConfig::default`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::adjusted_rand_index;
use crate::error::{Error, Result};
use crate::features::{FeatureRecord, MissingReason};
use crate::geometry::{haversine_km, Point, EARTH_RADIUS_KM};
use crate::ingest::{self, ingest_dir, IngestOptions};
use crate::model::{AnalysisConfig, ArchetypeLabel, CbgId, Feature, FeatureVector};
use crate::pipeline::{analyze, Analysis};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Flooded road segments per cell at most.
pub const MAX_FLOOD_LINES: usize = 4;
const POI_BASE: u64 = 50;
const ACTIVITY_BASE: u64 = 100;
const SPEED_BASE: u64 = 20_000;
const DEFAULT_BUILDINGS: u64 = 400;

/// A value drawn as `mean + spread * z`, with `z` standard normal clipped to ±2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dist {
    pub mean: f64,
    #[serde(default)]
    pub spread: f64,
}

impl Dist {
    pub const fn new(mean: f64, spread: f64) -> Self {
        Dist { mean, spread }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.spread * z.clamp(-2.0, 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub label: ArchetypeLabel,
    pub n_cbgs: usize,
    pub income: Dist,
    /// Raw feature distributions, keyed by feature name.
    pub features: BTreeMap<Feature, Dist>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub cell_size_deg: f64,
    pub columns: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            origin_lon: -95.9,
            origin_lat: 29.5,
            cell_size_deg: 0.02,
            columns: 39,
        }
    }
}

/// Dataset withheld for one CBG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    SpeedTests,
    BuildingCount,
    PoiBaseline,
    CardTransactions,
    Stays,
    Income,
}

impl GapKind {
    /// Features the gap knocks out and why.
    pub fn effects(self) -> &'static [(Feature, MissingReason)] {
        match self {
            GapKind::SpeedTests => &[(Feature::TelecomDisruption, MissingReason::NoData)],
            GapKind::BuildingCount => &[(Feature::DamageRatio, MissingReason::NoBuildingCount)],
            GapKind::PoiBaseline => &[(Feature::PreparednessProactivity, MissingReason::UnusableBaseline)],
            GapKind::CardTransactions => &[
                (Feature::RecoveryCcEssential, MissingReason::NoData),
                (Feature::RecoveryCcNonessential, MissingReason::NoData),
            ],
            GapKind::Stays => &[(Feature::EvacuationRateChange, MissingReason::NoData)],
            GapKind::Income => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gap {
    /// Position of the CBG in generation order (see [`synthetic_cbg_id`]).
    pub cbg_index: usize,
    pub kind: GapKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub rng_seed: u64,
    pub archetypes: Vec<ArchetypeSpec>,
    pub grid: GridSpec,
    pub devices_per_cbg: u32,
    pub gaps: Vec<Gap>,
    /// Unparseable rows appended across the CSV files; each is rejected at ingest.
    pub malformed_rows: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::default_fixture()
    }
}

/// Raw feature centers for a normalized risk level `r` and recovery level `c`
/// (both in [0, 1]), with spreads scaled by `noise`.
fn feature_dists(r: f64, c: f64, noise: f64) -> BTreeMap<Feature, Dist> {
    let s = 0.05 * noise;
    let mut m = BTreeMap::new();
    m.insert(Feature::PreparednessProactivity, Dist::new(5.0 * r, 5.0 * s));
    m.insert(Feature::EvacuationRateChange, Dist::new(15.0 * r, 15.0 * s));
    m.insert(Feature::FloodedRoadLength, Dist::new(3.0 * r, 3.0 * s));
    m.insert(Feature::ClaimCount, Dist::new(40.0 * r, 40.0 * s));
    m.insert(Feature::TotalDamageUsd, Dist::new(500_000.0 * r, 500_000.0 * s));
    m.insert(Feature::DamageRatio, Dist::new(0.1 * r, 0.1 * s));
    m.insert(Feature::TelecomDisruption, Dist::new(0.8 * r, 0.8 * s));
    for f in Feature::RECOVERY {
        m.insert(f, Dist::new(30.0 * c, 30.0 * s));
    }
    m
}

fn archetype(label: ArchetypeLabel, n_cbgs: usize, income: f64, r: f64, c: f64, noise: f64) -> ArchetypeSpec {
    ArchetypeSpec {
        label,
        n_cbgs,
        income: Dist::new(income, 4000.0 * noise),
        features: feature_dists(r, c, noise),
    }
}

impl ScenarioSpec {
    /// Four archetypes sized and priced like the Harris County 2017 clusters,
    /// with moderate noise.
    pub fn default_fixture() -> Self {
        ScenarioSpec::four_quadrants([299, 662, 210, 290], 1.0)
    }

    /// Equal-size archetypes with every spread zero.
    pub fn noiseless(n_per_archetype: usize) -> Self {
        ScenarioSpec::four_quadrants([n_per_archetype; 4], 0.0)
    }

    /// Archetypes LL, LH, HL, HH in that order. `c` is the recovery level,
    /// so a high `c` means slow recovery and low resilience.
    pub fn four_quadrants(sizes: [usize; 4], noise: f64) -> Self {
        use ArchetypeLabel::*;
        ScenarioSpec {
            rng_seed: 7,
            archetypes: vec![
                archetype(LL, sizes[0], 53_657.0, 0.15, 0.80, noise),
                archetype(LH, sizes[1], 62_053.5, 0.30, 0.35, noise),
                archetype(HL, sizes[2], 52_045.5, 0.75, 0.75, noise),
                archetype(HH, sizes[3], 68_026.0, 0.85, 0.15, noise),
            ],
            grid: GridSpec::default(),
            devices_per_cbg: 20,
            gaps: Vec::new(),
            malformed_rows: 0,
        }
    }

    pub fn total_cbgs(&self) -> usize {
        self.archetypes.iter().map(|a| a.n_cbgs).sum()
    }

    /// Reads a TOML or JSON spec, chosen by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Longest flooded length a cell can hold: four lines of 80% of the cell
    /// width at the grid's northern edge.
    pub fn max_flood_km(&self) -> f64 {
        let g = &self.grid;
        let rows = self.total_cbgs().div_ceil(g.columns.max(1));
        let lat = g.origin_lat + rows as f64 * g.cell_size_deg;
        let w = 0.8 * g.cell_size_deg;
        MAX_FLOOD_LINES as f64 * haversine_km(Point::new(0.0, lat), Point::new(w, lat))
    }

    /// Every violated constraint, each naming its field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let cfg = AnalysisConfig::default();
        if self.archetypes.is_empty() {
            v.push("archetypes: at least one archetype is required".to_string());
        }
        let mut labels = BTreeSet::new();
        let span = cfg.observation_span_days() as f64;
        let lead = (cfg.landfall_date - cfg.preparedness_window.start).num_days() as f64;
        let n_dev = f64::from(self.devices_per_cbg);
        let flood_cap = self.max_flood_km();
        for (i, a) in self.archetypes.iter().enumerate() {
            let at = format!("archetypes[{i}]");
            if !labels.insert(a.label) {
                v.push(format!("{at}.label: duplicate label {}", a.label.as_str()));
            }
            if a.n_cbgs < 1 {
                v.push(format!("{at}.n_cbgs: must be at least 1"));
            }
            let mut dists = vec![("income".to_string(), a.income)];
            for f in Feature::ALL {
                match a.features.get(&f) {
                    Some(d) => dists.push((format!("features.{}", f.name()), *d)),
                    None => v.push(format!("{at}.features.{}: missing", f.name())),
                }
            }
            for (name, d) in &dists {
                if !d.mean.is_finite() || !d.spread.is_finite() {
                    v.push(format!("{at}.{name}: mean and spread must be finite"));
                } else if d.spread < 0.0 {
                    v.push(format!("{at}.{name}.spread: must be non-negative"));
                }
            }
            if a.income.mean < 0.0 {
                v.push(format!("{at}.income.mean: must be non-negative"));
            }
            let mut range = |f: Feature, lo: f64, hi: f64, what: &str| {
                if let Some(d) = a.features.get(&f) {
                    if d.mean < lo || d.mean > hi {
                        v.push(format!("{at}.features.{}.mean: {} {what}", f.name(), d.mean));
                    }
                }
            };
            range(Feature::PreparednessProactivity, 0.0, lead, "lies outside the preparedness window");
            range(
                Feature::EvacuationRateChange,
                -1.0,
                n_dev - 1.0,
                "implies an evacuation rate outside [0, 1] for the device count",
            );
            range(Feature::FloodedRoadLength, 0.0, flood_cap, "km does not fit in a grid cell");
            range(Feature::ClaimCount, 0.0, f64::INFINITY, "is negative");
            range(Feature::TotalDamageUsd, 0.0, f64::INFINITY, "is negative");
            range(Feature::DamageRatio, 0.0, f64::INFINITY, "is negative");
            range(Feature::TelecomDisruption, 0.0, 1.0, "lies outside [0, 1]");
            for f in Feature::RECOVERY {
                range(f, 0.0, span, "days lies outside the observation span");
            }
        }
        let g = &self.grid;
        if !(g.cell_size_deg > 0.0 && g.cell_size_deg.is_finite()) {
            v.push("grid.cell_size_deg: must be positive".to_string());
        }
        if g.columns < 1 {
            v.push("grid.columns: must be at least 1".to_string());
        }
        if !(g.origin_lon.is_finite() && g.origin_lat.is_finite()) || g.origin_lat.abs() > 80.0 {
            v.push("grid.origin_lat: must be finite and within ±80 degrees".to_string());
        }
        if self.devices_per_cbg < 2 {
            v.push("devices_per_cbg: must be at least 2".to_string());
        }
        let total = self.total_cbgs();
        if total > 9_999_999 {
            v.push("archetypes: more CBGs than synthetic ids allow".to_string());
        }
        for (i, gap) in self.gaps.iter().enumerate() {
            if gap.cbg_index >= total {
                v.push(format!("gaps[{i}].cbg_index: {} is out of range (total {total})", gap.cbg_index));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

/// Id of the `index`-th generated CBG.
pub fn synthetic_cbg_id(index: usize) -> CbgId {
    CbgId::new(format!("48201{:07}", index + 1)).expect("12 digits")
}

/// What the generator planted for one CBG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCbg {
    pub archetype: ArchetypeLabel,
    pub income: Option<f64>,
    pub features: FeatureVector,
    /// Features withheld by gaps, with the reason code the pipeline should report.
    pub missing: BTreeMap<Feature, MissingReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rng_seed: u64,
    pub malformed_rows: usize,
    /// Keyed by CBG id.
    pub cbgs: BTreeMap<CbgId, PlantedCbg>,
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-CBG quantities fixed before anything is written.
struct Plan {
    id: CbgId,
    cell: [f64; 4],
    archetype: ArchetypeLabel,
    income: f64,
    pharmacy_lead: i64,
    gas_lead: i64,
    evacuees: u32,
    flood_lines: Vec<f64>,
    claim_points: Vec<Point>,
    claim_amounts: Vec<u64>,
    buildings: u64,
    speed_min: u64,
    recovery: [(u32, bool); 4],
    gaps: BTreeSet<GapKind>,
}

impl Plan {
    fn feature_vector(&self) -> FeatureVector {
        let mut v = FeatureVector::empty(self.id.clone());
        let count = self.claim_amounts.len() as u64;
        v.set(Feature::PreparednessProactivity, Some((self.pharmacy_lead + self.gas_lead) as f64 / 2.0));
        v.set(Feature::EvacuationRateChange, Some(f64::from(self.evacuees) - 1.0));
        v.set(Feature::FloodedRoadLength, Some(self.flood_lines.iter().sum()));
        v.claim_count = count;
        v.total_damage_usd = self.claim_amounts.iter().sum::<u64>() as f64;
        v.set(Feature::DamageRatio, Some(count as f64 / self.buildings as f64));
        let b = SPEED_BASE as f64;
        v.set(Feature::TelecomDisruption, Some((b - self.speed_min as f64) / b));
        for (slot, f) in Feature::RECOVERY.into_iter().enumerate() {
            v.set(f, Some(f64::from(self.recovery[slot].0)));
            v.censored_flags[slot] = self.recovery[slot].1;
        }
        v
    }
}

fn planted_missing(gaps: &BTreeSet<GapKind>) -> BTreeMap<Feature, MissingReason> {
    gaps.iter().flat_map(|g| g.effects().iter().copied()).collect()
}

fn make_plans(spec: &ScenarioSpec) -> Vec<Plan> {
    let cfg = AnalysisConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut labels: Vec<usize> = spec
        .archetypes
        .iter()
        .enumerate()
        .flat_map(|(i, a)| std::iter::repeat_n(i, a.n_cbgs))
        .collect();
    labels.shuffle(&mut rng);

    let span = cfg.observation_span_days() as f64;
    let lead_max = (cfg.landfall_date - cfg.preparedness_window.start).num_days() as f64;
    let n_dev = f64::from(spec.devices_per_cbg);
    let flood_cap = spec.max_flood_km();
    let per_line_cap = flood_cap / MAX_FLOOD_LINES as f64;
    let g = &spec.grid;
    let mut gaps: BTreeMap<usize, BTreeSet<GapKind>> = BTreeMap::new();
    for gap in &spec.gaps {
        gaps.entry(gap.cbg_index).or_default().insert(gap.kind);
    }

    labels
        .iter()
        .enumerate()
        .map(|(i, &ai)| {
            let a = &spec.archetypes[ai];
            let mut draw = |f: Feature, lo: f64, hi: f64| a.features[&f].sample(&mut rng).clamp(lo, hi);

            let prep = (draw(Feature::PreparednessProactivity, 0.0, lead_max) * 2.0).round() / 2.0;
            let evac = draw(Feature::EvacuationRateChange, -1.0, n_dev - 1.0).round();
            let flood = (draw(Feature::FloodedRoadLength, 0.0, flood_cap) * 1000.0).round() / 1000.0;
            let claims = draw(Feature::ClaimCount, 0.0, f64::INFINITY).round() as u64;
            let damage = draw(Feature::TotalDamageUsd, 0.0, f64::INFINITY).round() as u64;
            let ratio = draw(Feature::DamageRatio, 0.0, f64::INFINITY);
            let telecom = draw(Feature::TelecomDisruption, 0.0, 1.0);
            let mut recovery = [(0u32, false); 4];
            for (slot, f) in Feature::RECOVERY.into_iter().enumerate() {
                let d = draw(f, 0.0, span).round();
                recovery[slot] = (d as u32, d >= span);
            }
            let income = (a.income.sample(&mut rng).max(0.0) * 2.0).round() / 2.0;

            let (col, row) = ((i % g.columns) as f64, (i / g.columns) as f64);
            let cell = [
                g.origin_lon + col * g.cell_size_deg,
                g.origin_lat + row * g.cell_size_deg,
                g.origin_lon + (col + 1.0) * g.cell_size_deg,
                g.origin_lat + (row + 1.0) * g.cell_size_deg,
            ];

            let n_lines = if flood > 0.0 { (flood / per_line_cap).ceil().max(1.0) as usize } else { 0 };
            let flood_lines = vec![flood / n_lines.max(1) as f64; n_lines];

            let claim_points: Vec<Point> = (0..claims)
                .map(|_| {
                    let u: f64 = rng.random_range(0.05..0.95);
                    let v: f64 = rng.random_range(0.05..0.95);
                    Point::new(cell[0] + u * g.cell_size_deg, cell[1] + v * g.cell_size_deg)
                })
                .collect();
            let claim_amounts: Vec<u64> = (0..claims)
                .map(|j| damage / claims + u64::from(j < damage % claims))
                .collect();
            let buildings = if claims > 0 && ratio > 0.0 {
                ((claims as f64 / ratio).round() as u64).max(1)
            } else {
                DEFAULT_BUILDINGS
            };

            Plan {
                id: synthetic_cbg_id(i),
                cell,
                archetype: a.label,
                income,
                pharmacy_lead: prep.floor() as i64,
                gas_lead: prep.ceil() as i64,
                evacuees: (evac + 1.0) as u32,
                flood_lines,
                claim_points,
                claim_amounts,
                buildings,
                speed_min: (SPEED_BASE as f64 * (1.0 - telecom)).round() as u64,
                recovery,
                gaps: gaps.remove(&i).unwrap_or_default(),
            }
        })
        .collect()
}

/// Longitude span of a parallel segment of `km` kilometers at `lat` degrees,
/// inverting the haversine formula.
pub fn lon_span_for_length(km: f64, lat: f64) -> f64 {
    let half = (km / (2.0 * EARTH_RADIUS_KM)).sin() / lat.to_radians().cos();
    (2.0 * half.asin()).to_degrees()
}

fn date(m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, m, d).expect("valid date")
}

fn days(from: NaiveDate, to: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    from.iter_days().take_while(move |d| *d <= to)
}

/// Daily activity for a planted recovery duration: flat baseline, zero from
/// landfall, and on day `D` a rebound that lifts the trailing mean to -65/7 %.
fn recovery_series(duration: u32, censored: bool, cfg: &AnalysisConfig) -> Vec<(NaiveDate, u64)> {
    let landfall = cfg.landfall_date;
    let window = i64::from(cfg.rolling_window_days);
    days(cfg.recovery_baseline_window.start, cfg.recovery_observation_end)
        .map(|d| {
            let t = (d - landfall).num_days();
            let v = if t < 0 || duration == 0 {
                ACTIVITY_BASE
            } else if censored || t < i64::from(duration) {
                0
            } else if t == i64::from(duration) {
                let down = t.min(window - 1) as u64;
                ACTIVITY_BASE * down + 35
            } else {
                ACTIVITY_BASE
            };
            (d, v)
        })
        .collect()
}

fn ts(d: NaiveDate) -> String {
    format!("{}T00:00:00-05:00", d.format("%Y-%m-%d"))
}

fn polygon_json(c: &[f64; 4]) -> serde_json::Value {
    serde_json::json!([[
        [c[0], c[1]],
        [c[2], c[1]],
        [c[2], c[3]],
        [c[0], c[3]],
        [c[0], c[1]]
    ]])
}

fn feature_collection(features: Vec<serde_json::Value>) -> Vec<u8> {
    let fc = serde_json::json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_vec(&fc).expect("json")
}

#[derive(Default)]
struct Files {
    income: String,
    buildings: String,
    poi: String,
    cards: String,
    speed: String,
    stays: String,
    traffic: String,
    claims: String,
}

fn write_plan(p: &Plan, neighbor: &CbgId, devices: u32, cfg: &AnalysisConfig, f: &mut Files) {
    let id = &p.id;
    if !p.gaps.contains(&GapKind::Income) {
        writeln!(f.income, "{id},{}", p.income).unwrap();
    }
    if !p.gaps.contains(&GapKind::BuildingCount) {
        writeln!(f.buildings, "{id},{}", p.buildings).unwrap();
    }

    // Preparedness: flat baseline, mild rise in the window, one peak day.
    let prep = cfg.preparedness_window;
    for (category, lead) in [("poi_pharmacy", p.pharmacy_lead), ("poi_gas", p.gas_lead)] {
        let peak = cfg.landfall_date - Duration::days(lead);
        for d in days(cfg.poi_baseline_window.start, prep.end) {
            if p.gaps.contains(&GapKind::PoiBaseline) && cfg.poi_baseline_window.contains(d) {
                continue;
            }
            let v = if d == peak {
                2 * POI_BASE
            } else if prep.contains(d) {
                POI_BASE * 6 / 5
            } else {
                POI_BASE
            };
            writeln!(f.poi, "{d},{id},{category},{v}").unwrap();
        }
    }
    let series = [
        ("poi_essential", 0),
        ("poi_nonessential", 1),
        ("cc_essential", 2),
        ("cc_nonessential", 3),
    ];
    for (category, slot) in series {
        let is_card = slot >= 2;
        if is_card && p.gaps.contains(&GapKind::CardTransactions) {
            continue;
        }
        let (duration, censored) = p.recovery[slot];
        let out = if is_card { &mut f.cards } else { &mut f.poi };
        for (d, v) in recovery_series(duration, censored, cfg) {
            writeln!(out, "{d},{id},{category},{v}").unwrap();
        }
    }

    if !p.gaps.contains(&GapKind::SpeedTests) {
        let dip = date(8, 28);
        for d in days(cfg.telecom_baseline_window.start, date(9, 8)) {
            let v = if d == dip { p.speed_min } else { SPEED_BASE };
            writeln!(f.speed, "{d},{id},download_kbps,{v}").unwrap();
        }
    }

    if !p.gaps.contains(&GapKind::Stays) {
        let (start, end) = (cfg.evac_baseline_window.start, date(10, 1));
        let (leave, back) = (date(8, 26), date(8, 29));
        for dev in 0..devices {
            let device = format!("{id}-{dev:03}");
            let mut cursor = start;
            let seg = |from: NaiveDate, to: NaiveDate, stay: &CbgId, out: &mut String| {
                writeln!(out, "{device},{id},{stay},{},{}", ts(from), ts(to)).unwrap();
            };
            if dev == 0 {
                let baseline_end = cfg.evac_baseline_window.end.succ_opt().unwrap();
                seg(cursor, baseline_end, neighbor, &mut f.stays);
                cursor = baseline_end;
            }
            if dev >= devices - p.evacuees {
                seg(cursor, leave, id, &mut f.stays);
                seg(leave, back, neighbor, &mut f.stays);
                cursor = back;
            }
            seg(cursor, end, id, &mut f.stays);
        }
    }

    for (j, (pt, amount)) in p.claim_points.iter().zip(&p.claim_amounts).enumerate() {
        // Every fifth claim is located by id instead of by point.
        if j % 5 == 4 {
            writeln!(f.claims, "{id}-c{j:03},,,{id},{amount}").unwrap();
        } else {
            writeln!(f.claims, "{id}-c{j:03},{},{},,{amount}", pt.lat, pt.lon).unwrap();
        }
    }
}

fn road_lines(p: &Plan, cell_size: f64) -> (Vec<(String, Vec<[f64; 2]>)>, Vec<(String, Vec<[f64; 2]>)>) {
    let [x0, y0, ..] = p.cell;
    let flooded = p
        .flood_lines
        .iter()
        .enumerate()
        .map(|(j, km)| {
            let lat = y0 + cell_size * 0.2 * (j + 1) as f64;
            let start = x0 + 0.1 * cell_size;
            let id = format!("{}-f{j}", p.id);
            (id, vec![[start, lat], [start + lon_span_for_length(*km, lat), lat]])
        })
        .collect();
    // A dry road from the cell center into the next cell east.
    let lat = y0 + 0.1 * cell_size;
    let dry = vec![(
        format!("{}-r", p.id),
        vec![[x0 + 0.5 * cell_size, lat], [x0 + 1.5 * cell_size, lat]],
    )];
    (flooded, dry)
}

fn malformed_lines(spec: &ScenarioSpec, f: &mut Files) {
    let id = synthetic_cbg_id(0);
    for k in 0..spec.malformed_rows {
        match k % 6 {
            0 => writeln!(f.income, "not-a-cbg,{}", 50_000 + k).unwrap(),
            1 => writeln!(f.buildings, "{id},-{k}").unwrap(),
            2 => writeln!(f.poi, "2017-13-45,{id},poi_gas,5").unwrap(),
            3 => writeln!(f.cards, "2017-08-02,{id},cc_unknown,5").unwrap(),
            4 => writeln!(f.claims, "bad-{k},,,,100").unwrap(),
            _ => writeln!(f.speed, "2017-08-02,{id},download_kbps,fast").unwrap(),
        }
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

/// Writes a full input bundle plus `ground_truth.json` into `out` and
/// returns the ground truth.
pub fn generate_scenario(spec: &ScenarioSpec, out: &Path) -> Result<GroundTruth> {
    spec.validate()?;
    let cfg = AnalysisConfig::default();
    let plans = make_plans(spec);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut files = Files {
        income: "cbg_id,median_income\n".into(),
        buildings: "cbg_id,building_count\n".into(),
        poi: "date,cbg_id,category,value\n".into(),
        cards: "date,cbg_id,category,value\n".into(),
        speed: "date,cbg_id,category,value\n".into(),
        stays: "device_id,home_cbg,stay_cbg,start_ts,end_ts\n".into(),
        traffic: "segment_id,timestamp,speed_mph\n".into(),
        claims: "claim_id,lat,lon,cbg_id,damage_amount_usd\n".into(),
    };
    let mut cbg_features = Vec::with_capacity(plans.len());
    let mut road_features = Vec::new();
    let n = plans.len();
    for (i, p) in plans.iter().enumerate() {
        let neighbor = &plans[(i + 1) % n].id;
        write_plan(p, neighbor, spec.devices_per_cbg, &cfg, &mut files);
        cbg_features.push(serde_json::json!({
            "type": "Feature",
            "properties": { "cbg_id": p.id.as_str() },
            "geometry": { "type": "Polygon", "coordinates": polygon_json(&p.cell) },
        }));
        let (flooded, dry) = road_lines(p, spec.grid.cell_size_deg);
        for (sid, coords) in flooded {
            writeln!(files.traffic, "{sid},2017-08-21T08:00:00,30.5").unwrap();
            writeln!(files.traffic, "{sid},2017-08-27T10:00:00,").unwrap();
            writeln!(files.traffic, "{sid},2017-08-27T10:05:00,").unwrap();
            road_features.push((sid, coords));
        }
        for (sid, coords) in dry {
            writeln!(files.traffic, "{sid},2017-08-21T08:00:00,35").unwrap();
            writeln!(files.traffic, "{sid},2017-08-27T10:00:00,20").unwrap();
            // A null after the traffic window must not count as flooding.
            writeln!(files.traffic, "{sid},2017-09-20T12:00:00,").unwrap();
            road_features.push((sid, coords));
        }
    }
    malformed_lines(spec, &mut files);
    let roads = road_features
        .into_iter()
        .map(|(sid, coords)| {
            serde_json::json!({
                "type": "Feature",
                "properties": { "segment_id": sid },
                "geometry": { "type": "LineString", "coordinates": coords },
            })
        })
        .collect();

    write(out, ingest::CBGS_FILE, &feature_collection(cbg_features))?;
    write(out, ingest::ROADS_FILE, &feature_collection(roads))?;
    for (name, text) in [
        (ingest::INCOME_FILE, &files.income),
        (ingest::BUILDINGS_FILE, &files.buildings),
        (ingest::POI_FILE, &files.poi),
        (ingest::CARDS_FILE, &files.cards),
        (ingest::SPEED_FILE, &files.speed),
        (ingest::STAYS_FILE, &files.stays),
        (ingest::TRAFFIC_FILE, &files.traffic),
        (ingest::CLAIMS_FILE, &files.claims),
    ] {
        write(out, name, text.as_bytes())?;
    }

    let truth = GroundTruth {
        rng_seed: spec.rng_seed,
        malformed_rows: spec.malformed_rows,
        cbgs: plans
            .iter()
            .map(|p| {
                let missing = planted_missing(&p.gaps);
                let mut features = p.feature_vector();
                for f in missing.keys() {
                    features.set(*f, None);
                    if let Some(slot) = f.recovery_slot() {
                        features.censored_flags[slot] = false;
                    }
                }
                let planted = PlantedCbg {
                    archetype: p.archetype,
                    income: (!p.gaps.contains(&GapKind::Income)).then_some(p.income),
                    features,
                    missing,
                };
                (p.id.clone(), planted)
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&truth)?;
    bytes.push(b'\n');
    write(out, GROUND_TRUTH_FILE, &bytes)?;
    Ok(truth)
}

/// Agreement of one feature with its planted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDeviation {
    pub feature: Feature,
    pub compared: usize,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub rejected_rows: u64,
    pub deviations: Vec<FeatureDeviation>,
    /// CBGs whose set of missing features or reason codes differs from the plan.
    pub missing_mismatches: usize,
    pub censor_mismatches: usize,
    /// CBGs that went into clustering.
    pub clustered: usize,
    pub ari: f64,
    /// Fraction of clustered CBGs whose recovered archetype equals the planted one.
    pub label_agreement: f64,
    pub silhouette: f64,
    pub labels: Vec<ArchetypeLabel>,
}

impl RoundtripReport {
    pub fn deviation(&self, f: Feature) -> f64 {
        self.deviations
            .iter()
            .find(|d| d.feature == f)
            .map_or(f64::NAN, |d| d.max_abs_deviation)
    }
}

fn same_missing(rec: &FeatureRecord, planted: &PlantedCbg) -> bool {
    rec.missing == planted.missing
}

/// Compares a finished analysis with the ground truth.
pub fn compare(analysis: &Analysis, truth: &GroundTruth, rejected_rows: u64) -> RoundtripReport {
    let mut deviations: Vec<FeatureDeviation> = Feature::ALL
        .into_iter()
        .map(|feature| FeatureDeviation {
            feature,
            compared: 0,
            max_abs_deviation: 0.0,
        })
        .collect();
    let mut missing_mismatches = 0;
    let mut censor_mismatches = 0;
    for rec in &analysis.records {
        let Some(planted) = truth.cbgs.get(&rec.vector.cbg) else {
            missing_mismatches += 1;
            continue;
        };
        if !same_missing(rec, planted) {
            missing_mismatches += 1;
        }
        if rec.vector.censored_flags != planted.features.censored_flags {
            censor_mismatches += 1;
        }
        for f in Feature::ALL {
            if let (Some(got), Some(want)) = (rec.vector.get(f), planted.features.get(f)) {
                let d = &mut deviations[f.index()];
                d.compared += 1;
                d.max_abs_deviation = d.max_abs_deviation.max((got - want).abs());
            }
        }
    }

    let label_index = |l: ArchetypeLabel| ArchetypeLabel::ALL.iter().position(|x| *x == l).unwrap_or(0);
    let mut recovered = Vec::new();
    let mut planted = Vec::new();
    let mut agree = 0usize;
    for (i, id) in analysis.matrix.cbgs.iter().enumerate() {
        let cluster = analysis.model.labels[i];
        let want = truth.cbgs.get(id).map(|p| p.archetype);
        recovered.push(cluster);
        planted.push(want.map_or(usize::MAX, label_index));
        if want == Some(analysis.archetypes.clusters[cluster].label) {
            agree += 1;
        }
    }
    let clustered = recovered.len();
    RoundtripReport {
        rejected_rows,
        deviations,
        missing_mismatches,
        censor_mismatches,
        clustered,
        ari: adjusted_rand_index(&recovered, &planted),
        label_agreement: if clustered == 0 { 0.0 } else { agree as f64 / clustered as f64 },
        silhouette: analysis.model.silhouette,
        labels: analysis.archetypes.clusters.iter().map(|c| c.label).collect(),
    }
}

/// Ingests a generated bundle, runs the full pipeline and compares the
/// result with the ground truth.
pub fn verify_roundtrip(bundle: &Path, truth: &GroundTruth, cfg: &AnalysisConfig) -> Result<(RoundtripReport, Analysis)> {
    let ws = ingest_dir(bundle, &IngestOptions::default())?;
    let (analysis, _) = analyze(&ws, cfg)?;
    let report = compare(&analysis, truth, ws.report.total_rejected());
    Ok((report, analysis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{baseline, recovery_duration, rolling_pct_change};
    use crate::model::{DailySeries, MetricKind};

    #[test]
    fn default_fixture_is_valid_and_sized() {
        let spec = ScenarioSpec::default_fixture();
        assert_eq!(spec.violations(), Vec::<String>::new());
        assert_eq!(spec.total_cbgs(), 1461);
    }

    #[test]
    fn violations_name_the_field() {
        let mut spec = ScenarioSpec::noiseless(3);
        spec.archetypes[1].n_cbgs = 0;
        spec.archetypes[2].features.get_mut(&Feature::EvacuationRateChange).unwrap().mean = 40.0;
        spec.archetypes[0].features.remove(&Feature::ClaimCount);
        let v = spec.violations();
        assert!(v.iter().any(|s| s.starts_with("archetypes[1].n_cbgs")), "{v:?}");
        assert!(v.iter().any(|s| s.starts_with("archetypes[2].features.evacuation_rate_change")), "{v:?}");
        assert!(v.iter().any(|s| s.starts_with("archetypes[0].features.claim_count")), "{v:?}");
    }

    #[test]
    fn lon_span_inverts_haversine() {
        for (km, lat) in [(0.5, 29.8), (1.4, 30.2), (0.001, 0.0), (2.0, 60.0)] {
            let dl = lon_span_for_length(km, lat);
            let back = haversine_km(Point::new(-95.0, lat), Point::new(-95.0 + dl, lat));
            assert!((back - km).abs() < 1e-9, "{km} {lat} {back}");
        }
    }

    #[test]
    fn recovery_series_crosses_on_the_planted_day() {
        let cfg = AnalysisConfig::default();
        let id = synthetic_cbg_id(0);
        for (d, censored) in [(0, false), (1, false), (3, false), (6, false), (7, false), (20, false), (35, false), (36, true)] {
            let s = DailySeries::from_values(
                id.clone(),
                MetricKind::PoiEssential,
                recovery_series(d, censored, &cfg).into_iter().map(|(day, v)| (day, v as f64)),
            );
            let base = baseline(&s, cfg.recovery_baseline_window);
            let got = recovery_duration(&rolling_pct_change(&s, &base, &cfg), &cfg);
            assert_eq!((got.days, got.censored), (d, censored), "planted {d}");
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let spec = ScenarioSpec::noiseless(2);
        let a: Vec<_> = make_plans(&spec).iter().map(Plan::feature_vector).collect();
        let b: Vec<_> = make_plans(&spec).iter().map(Plan::feature_vector).collect();
        assert_eq!(a, b);
    }
}
