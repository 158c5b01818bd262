//! The eleven coupled human-infrastructure features per CBG.
//!
//! Protective actions come from percent change against a flat pre-event
//! baseline: preparedness from pharmacy and gas-station visits, evacuation from
//! stay segments. Infrastructure impact covers flooded road length, flood
//! claims and the telecom slowdown. Recovery is the number of days from
//! landfall until the trailing rolling percent change of visits or card
//! transactions returns within the threshold of baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{assign_points, CbgTable, LineString};
use crate::ingest::{ClaimLocation, ClaimRecord, StaySegment, TrafficReading, Workspace};
use crate::model::{
    AnalysisConfig, CbgId, DailySeries, DateWindow, Feature, FeatureVector, MetricKind,
    RollingAggregation,
};

/// Minimum daily location coverage for a device to count on a given day.
pub const MIN_DAILY_COVERAGE_MINUTES: i64 = 240;
/// Minimum duration of an away stay for it to count as evacuation.
pub const MIN_EVACUATION_STAY_MINUTES: i64 = 1440;
/// Minimum fraction of a baseline window's days that must be present.
pub const MIN_BASELINE_COVERAGE: f64 = 0.5;
/// Traffic readings are reported every five minutes.
pub const TRAFFIC_INTERVAL_MINUTES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineValue {
    pub value: f64,
    /// Fraction of the window's days present in the series.
    pub coverage: f64,
    pub usable: bool,
}

/// Flat mean of the series over the days of `window` it has values for.
/// Unusable when the mean is not positive or fewer than half the window's
/// days are present.
pub fn baseline(series: &DailySeries, window: DateWindow) -> BaselineValue {
    let (sum, n) = series
        .in_window(window)
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    let days = window.day_count();
    let coverage = if days == 0 { 0.0 } else { n as f64 / days as f64 };
    let value = if n == 0 { 0.0 } else { sum / n as f64 };
    BaselineValue {
        value,
        coverage,
        usable: value > 0.0 && value.is_finite() && coverage >= MIN_BASELINE_COVERAGE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentChangeSeries {
    pub cbg: CbgId,
    pub metric: MetricKind,
    pub values: BTreeMap<NaiveDate, f64>,
}

/// `(V - B) / B` for every date of the series; `None` when the baseline is unusable.
pub fn percent_change(series: &DailySeries, base: &BaselineValue) -> Option<PercentChangeSeries> {
    if !base.usable {
        return None;
    }
    let b = base.value;
    Some(PercentChangeSeries {
        cbg: series.cbg.clone(),
        metric: series.metric,
        values: series.values.iter().map(|(d, v)| (*d, (v - b) / b)).collect(),
    })
}

/// Days before landfall of the earliest peak percent change inside the
/// preparedness window.
fn peak_lead_days(pc: &PercentChangeSeries, cfg: &AnalysisConfig) -> Option<f64> {
    let mut best: Option<(NaiveDate, f64)> = None;
    for (d, v) in pc.values.range(cfg.preparedness_window.start..=cfg.preparedness_window.end) {
        // Strictly greater keeps the earliest date among ties.
        if best.is_none_or(|(_, b)| *v > b) {
            best = Some((*d, *v));
        }
    }
    best.map(|(d, _)| (cfg.landfall_date - d).num_days().max(0) as f64)
}

/// Mean over pharmacy and gas of the lead (in days) of each category's
/// earliest peak before landfall. Missing only when both categories are.
pub fn preparedness_proactivity(
    pc_pharmacy: Option<&PercentChangeSeries>,
    pc_gas: Option<&PercentChangeSeries>,
    cfg: &AnalysisConfig,
) -> Option<f64> {
    let leads: Vec<f64> = [pc_pharmacy, pc_gas]
        .into_iter()
        .flatten()
        .filter_map(|pc| peak_lead_days(pc, cfg))
        .collect();
    if leads.is_empty() {
        None
    } else {
        Some(leads.iter().sum::<f64>() / leads.len() as f64)
    }
}

fn day_start(d: NaiveDate) -> NaiveDateTime {
    d.and_hms_opt(0, 0, 0).expect("midnight exists")
}

#[derive(Debug, Clone, Copy, Default)]
struct DeviceDay {
    covered_seconds: i64,
    away_long: bool,
}

/// Per-day coverage and evacuation status of one device's stays.
fn device_days(segments: &[StaySegment]) -> BTreeMap<NaiveDate, DeviceDay> {
    let mut days: BTreeMap<NaiveDate, DeviceDay> = BTreeMap::new();
    for seg in segments {
        let long_away = seg.is_away() && seg.duration_minutes() >= MIN_EVACUATION_STAY_MINUTES;
        let mut d = seg.start.date();
        while day_start(d) < seg.end {
            let from = seg.start.max(day_start(d));
            let to = seg.end.min(day_start(d) + Duration::days(1));
            let overlap = (to - from).num_seconds();
            if overlap > 0 {
                let entry = days.entry(d).or_default();
                entry.covered_seconds += overlap;
                entry.away_long |= long_away;
            }
            d = d.succ_opt().expect("date in range");
        }
    }
    days
}

/// Daily evacuation rate per home CBG: among devices with at least
/// [`MIN_DAILY_COVERAGE_MINUTES`] of location data that day, the fraction with
/// a stay of at least one full day outside the home CBG overlapping it.
/// Days without qualifying devices are absent.
pub fn evacuation_series(segments: &[StaySegment]) -> BTreeMap<CbgId, DailySeries> {
    let mut by_device: Vec<&[StaySegment]> = Vec::new();
    let mut start = 0;
    for i in 1..=segments.len() {
        if i == segments.len() || segments[i].device_id != segments[start].device_id {
            if i > start {
                by_device.push(&segments[start..i]);
            }
            start = i;
        }
    }
    let per_device: Vec<(CbgId, BTreeMap<NaiveDate, DeviceDay>)> = by_device
        .par_iter()
        .map(|segs| (segs[0].home_cbg.clone(), device_days(segs)))
        .collect();

    let mut counts: BTreeMap<CbgId, BTreeMap<NaiveDate, (u32, u32)>> = BTreeMap::new();
    for (home, days) in per_device {
        let cbg_counts = counts.entry(home).or_default();
        for (d, day) in days {
            if day.covered_seconds >= MIN_DAILY_COVERAGE_MINUTES * 60 {
                let c = cbg_counts.entry(d).or_insert((0, 0));
                c.0 += 1;
                if day.away_long {
                    c.1 += 1;
                }
            }
        }
    }
    counts
        .into_iter()
        .map(|(cbg, days)| {
            let values = days
                .into_iter()
                .map(|(d, (qualifying, evacuated))| (d, f64::from(evacuated) / f64::from(qualifying)));
            let series = DailySeries::from_values(cbg.clone(), MetricKind::EvacuationRate, values);
            (cbg, series)
        })
        .collect()
}

/// Why a feature could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingReason {
    NoData,
    UnusableBaseline,
    EmptyWindow,
    NoBuildingCount,
    Missing,
}

impl MissingReason {
    pub fn code(self) -> &'static str {
        match self {
            MissingReason::NoData => "no_data",
            MissingReason::UnusableBaseline => "unusable_baseline",
            MissingReason::EmptyWindow => "empty_window",
            MissingReason::NoBuildingCount => "no_building_count",
            MissingReason::Missing => "missing",
        }
    }
}

/// Maximum over the event window of `(ER_t - ER_B) / ER_B`.
pub fn evacuation_feature(er: &DailySeries, cfg: &AnalysisConfig) -> Result<f64, MissingReason> {
    let base = baseline(er, cfg.evac_baseline_window);
    if !base.usable {
        return Err(MissingReason::UnusableBaseline);
    }
    er.in_window(cfg.evac_event_window)
        .map(|(_, v)| (v - base.value) / base.value)
        .reduce(f64::max)
        .ok_or(MissingReason::EmptyWindow)
}

/// Segments with enough null-speed readings inside the traffic event window.
pub fn flooded_segments(readings: &[TrafficReading], cfg: &AnalysisConfig) -> BTreeSet<String> {
    let mut nulls: BTreeMap<&str, u32> = BTreeMap::new();
    for r in readings {
        if r.speed.is_none() && cfg.traffic_event_window.contains(r.timestamp.date()) {
            *nulls.entry(r.segment_id.as_str()).or_default() += 1;
        }
    }
    nulls
        .into_iter()
        .filter(|(_, n)| *n >= 1 && n * TRAFFIC_INTERVAL_MINUTES >= cfg.min_null_duration_minutes)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Total clipped length (km) of flooded road segments inside each CBG.
/// CBGs without flooded roads get 0.
pub fn flooded_road_length(
    readings: &[TrafficReading],
    roads: &BTreeMap<String, LineString>,
    cbgs: &CbgTable,
    cfg: &AnalysisConfig,
) -> BTreeMap<CbgId, f64> {
    let flooded: Vec<&LineString> = flooded_segments(readings, cfg)
        .iter()
        .filter_map(|id| roads.get(id))
        .collect();
    let regions: Vec<_> = cbgs.iter().collect();
    regions
        .par_iter()
        .map(|(id, region)| {
            let km = flooded.iter().map(|line| region.clip_length(line)).sum::<f64>();
            ((*id).clone(), km)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimStats {
    pub claim_count: u64,
    pub total_damage_usd: f64,
    /// Claims per building; `None` when the building count is zero or unknown.
    pub damage_ratio: Option<f64>,
}

/// Claim count, summed damage and claims-per-building for every CBG in the
/// table. Point claims are joined by point-in-polygon; claims that land in no
/// CBG are dropped.
pub fn claims_features(
    claims: &[ClaimRecord],
    building_counts: &BTreeMap<CbgId, u64>,
    cbgs: &CbgTable,
) -> BTreeMap<CbgId, ClaimStats> {
    let points: Vec<_> = claims
        .iter()
        .filter_map(|c| match &c.location {
            ClaimLocation::Point(p) => Some(*p),
            ClaimLocation::Cbg(_) => None,
        })
        .collect();
    let mut assigned = assign_points(&points, cbgs).into_iter();
    let mut sums: BTreeMap<CbgId, (u64, f64)> = cbgs.ids().map(|id| (id.clone(), (0, 0.0))).collect();
    let mut unassigned = 0usize;
    for claim in claims {
        let target = match &claim.location {
            ClaimLocation::Point(_) => assigned.next().flatten(),
            ClaimLocation::Cbg(id) => Some(id.clone()),
        };
        match target.and_then(|id| sums.get_mut(&id)) {
            Some(slot) => {
                slot.0 += 1;
                slot.1 += claim.damage_amount_usd;
            }
            None => unassigned += 1,
        }
    }
    if unassigned > 0 {
        log::warn!("{unassigned} claims fall outside every CBG");
    }
    sums.into_iter()
        .map(|(id, (count, total))| {
            let ratio = match building_counts.get(&id) {
                Some(&b) if b > 0 => Some(count as f64 / b as f64),
                _ => None,
            };
            let stats = ClaimStats {
                claim_count: count,
                total_damage_usd: total,
                damage_ratio: ratio,
            };
            (id, stats)
        })
        .collect()
}

/// `(Speed_B - min Speed_t) / Speed_B` over the minimum window. Not clamped:
/// improved speeds give negative values.
pub fn telecom_disruption(speed: &DailySeries, cfg: &AnalysisConfig) -> Result<f64, MissingReason> {
    let base = baseline(speed, cfg.telecom_baseline_window);
    if !base.usable {
        return Err(MissingReason::UnusableBaseline);
    }
    let min = speed
        .in_window(cfg.telecom_min_window)
        .map(|(_, v)| v)
        .reduce(f64::min)
        .ok_or(MissingReason::EmptyWindow)?;
    Ok((base.value - min) / base.value)
}

/// Trailing rolling aggregate of the daily percent change `100 (V - B) / B`.
///
/// Defined for every calendar day from the first series date to the last that
/// has at least one present day in its trailing window. Days absent from the
/// series are skipped rather than imputed.
pub fn rolling_pct_change(
    series: &DailySeries,
    base: &BaselineValue,
    cfg: &AnalysisConfig,
) -> BTreeMap<NaiveDate, f64> {
    let mut out = BTreeMap::new();
    if !base.usable {
        return out;
    }
    let (Some(first), Some(last)) = (series.values.keys().next(), series.values.keys().next_back()) else {
        return out;
    };
    let span = i64::from(cfg.rolling_window_days.max(1)) - 1;
    let b = base.value;
    let mut d = *first;
    while d <= *last {
        let from = d - Duration::days(span);
        let (sum, n) = series
            .values
            .range(from..=d)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + 100.0 * (v - b) / b, n + 1));
        if n > 0 {
            let value = match cfg.rolling_aggregation {
                RollingAggregation::Mean => sum / n as f64,
                RollingAggregation::Sum => sum,
            };
            out.insert(d, value);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDuration {
    pub days: u32,
    /// Threshold never reached by the end of observation.
    pub censored: bool,
}

/// Days from landfall to the first day whose rolled percent change is at
/// least `-(1 - threshold) * 100`. Censored at the observation span.
pub fn recovery_duration(rolled: &BTreeMap<NaiveDate, f64>, cfg: &AnalysisConfig) -> RecoveryDuration {
    let threshold = -(1.0 - cfg.recovery_threshold_pct) * 100.0;
    let first = rolled
        .range(cfg.landfall_date..=cfg.recovery_observation_end)
        .find(|(_, v)| **v >= threshold);
    match first {
        Some((d, _)) => RecoveryDuration {
            days: (*d - cfg.landfall_date).num_days() as u32,
            censored: false,
        },
        None => RecoveryDuration {
            days: cfg.observation_span_days().max(0) as u32,
            censored: true,
        },
    }
}

/// Series feeding each recovery feature.
pub const RECOVERY_SOURCES: [(Feature, MetricKind); 4] = [
    (Feature::RecoveryEssentialActivity, MetricKind::PoiEssential),
    (Feature::RecoveryNonessentialActivity, MetricKind::PoiNonessential),
    (Feature::RecoveryCcEssential, MetricKind::CcEssential),
    (Feature::RecoveryCcNonessential, MetricKind::CcNonessential),
];

/// One CBG's features plus the reason each missing one is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub vector: FeatureVector,
    pub missing: BTreeMap<Feature, MissingReason>,
}

impl FeatureRecord {
    /// Rebuilds a record from a vector whose missing reasons were not kept.
    pub fn from_vector(vector: FeatureVector) -> Self {
        let missing = Feature::ALL
            .into_iter()
            .filter(|f| vector.get(*f).is_none())
            .map(|f| (f, MissingReason::Missing))
            .collect();
        FeatureRecord { vector, missing }
    }

    fn set(&mut self, feature: Feature, value: Result<f64, MissingReason>) {
        match value {
            Ok(v) => self.vector.set(feature, Some(v)),
            Err(reason) => {
                self.vector.set(feature, None);
                self.missing.insert(feature, reason);
            }
        }
    }
}

/// Computes all eleven features for every CBG of the workspace.
pub fn compute_features(ws: &Workspace, cfg: &AnalysisConfig) -> Vec<FeatureRecord> {
    let mut series: HashMap<(&CbgId, MetricKind), &DailySeries> = HashMap::new();
    for s in ws.poi.iter().chain(&ws.cards).chain(&ws.speed) {
        series.insert((&s.cbg, s.metric), s);
    }
    let evac = evacuation_series(&ws.stays);
    let flood = flooded_road_length(&ws.traffic, &ws.roads, &ws.cbgs, cfg);
    let claims = claims_features(&ws.claims, &ws.buildings, &ws.cbgs);

    let ids: Vec<&CbgId> = ws.cbgs.ids().collect();
    ids.par_iter()
        .map(|id| {
            let id = *id;
            let mut rec = FeatureRecord {
                vector: FeatureVector::empty(id.clone()),
                missing: BTreeMap::new(),
            };
            let get = |m: MetricKind| series.get(&(id, m)).copied();

            let pc = |m: MetricKind| {
                get(m).and_then(|s| percent_change(s, &baseline(s, cfg.poi_baseline_window)))
            };
            let (pharmacy, gas) = (get(MetricKind::PoiPharmacy), get(MetricKind::PoiGas));
            let prep = match preparedness_proactivity(pc(MetricKind::PoiPharmacy).as_ref(), pc(MetricKind::PoiGas).as_ref(), cfg) {
                Some(v) => Ok(v),
                None if pharmacy.is_none() && gas.is_none() => Err(MissingReason::NoData),
                None => Err(MissingReason::UnusableBaseline),
            };
            rec.set(Feature::PreparednessProactivity, prep);

            let er = evac.get(id).ok_or(MissingReason::NoData).and_then(|s| evacuation_feature(s, cfg));
            rec.set(Feature::EvacuationRateChange, er);

            rec.set(Feature::FloodedRoadLength, Ok(flood.get(id).copied().unwrap_or(0.0)));

            let stats = claims.get(id).copied().unwrap_or(ClaimStats {
                claim_count: 0,
                total_damage_usd: 0.0,
                damage_ratio: None,
            });
            rec.vector.claim_count = stats.claim_count;
            rec.vector.total_damage_usd = stats.total_damage_usd;
            rec.set(Feature::DamageRatio, stats.damage_ratio.ok_or(MissingReason::NoBuildingCount));

            let telecom = get(MetricKind::DownloadKbps)
                .ok_or(MissingReason::NoData)
                .and_then(|s| telecom_disruption(s, cfg));
            rec.set(Feature::TelecomDisruption, telecom);

            for (slot, (feature, metric)) in RECOVERY_SOURCES.into_iter().enumerate() {
                let duration = get(metric).ok_or(MissingReason::NoData).and_then(|s| {
                    let base = baseline(s, cfg.recovery_baseline_window);
                    if !base.usable {
                        return Err(MissingReason::UnusableBaseline);
                    }
                    Ok(recovery_duration(&rolling_pct_change(s, &base, cfg), cfg))
                });
                match duration {
                    Ok(d) => {
                        rec.vector.censored_flags[slot] = d.censored;
                        rec.set(feature, Ok(f64::from(d.days)));
                    }
                    Err(reason) => rec.set(feature, Err(reason)),
                }
            }
            rec
        })
        .collect()
}

/// Complete feature rows, in CBG id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub cbgs: Vec<CbgId>,
    pub rows: Vec<[f64; Feature::COUNT]>,
    pub censored: Vec<[bool; 4]>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, feature: Feature) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[feature.index()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub cbg: CbgId,
    pub feature: Feature,
    pub reason: MissingReason,
}

/// Keeps CBGs with all eleven features; lists one exclusion per missing
/// feature of the rest. Errors when fewer than `k` rows remain.
pub fn assemble_feature_matrix(records: &[FeatureRecord], k: usize) -> Result<(FeatureMatrix, Vec<Exclusion>)> {
    let mut sorted: Vec<&FeatureRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.vector.cbg.cmp(&b.vector.cbg));
    let mut matrix = FeatureMatrix {
        cbgs: Vec::new(),
        rows: Vec::new(),
        censored: Vec::new(),
    };
    let mut exclusions = Vec::new();
    for rec in sorted {
        let values = rec.vector.values();
        if values.iter().all(|v| v.is_some_and(f64::is_finite)) {
            matrix.cbgs.push(rec.vector.cbg.clone());
            matrix.rows.push(values.map(|v| v.unwrap_or_default()));
            matrix.censored.push(rec.vector.censored_flags);
        } else {
            for f in Feature::ALL {
                if !values[f.index()].is_some_and(f64::is_finite) {
                    let reason = rec.missing.get(&f).copied().unwrap_or(MissingReason::Missing);
                    exclusions.push(Exclusion {
                        cbg: rec.vector.cbg.clone(),
                        feature: f,
                        reason,
                    });
                }
            }
        }
    }
    if matrix.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} complete CBGs, need at least {k}",
            matrix.len()
        )));
    }
    Ok((matrix, exclusions))
}
