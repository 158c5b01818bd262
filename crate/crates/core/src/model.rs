//! Shared domain types: identifiers, calendar windows, series, the feature
//! catalog and the analysis configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A 12-digit census block group code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CbgId(String);

impl CbgId {
    pub fn new(value: impl Into<String>) -> Result<Self, Error> {
        let value = value.into();
        if value.len() == 12 && value.bytes().all(|b| b.is_ascii_digit()) {
            Ok(CbgId(value))
        } else {
            Err(Error::InvalidCbgId(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for CbgId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CbgId::new(s.trim())
    }
}

impl fmt::Display for CbgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for CbgId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CbgId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CbgId::new(s).map_err(serde::de::Error::custom)
    }
}

/// Inclusive calendar date range. Serialized as an `[start, end]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    /// Builds a window without checking `start <= end`; see [`DateWindow::is_valid`].
    pub const fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateWindow { start, end }
    }

    pub fn is_valid(&self) -> bool {
        self.start <= self.end
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    /// Number of calendar days covered, counting both endpoints.
    pub fn day_count(&self) -> usize {
        if self.is_valid() {
            (self.end - self.start).num_days() as usize + 1
        } else {
            0
        }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }
}

impl Serialize for DateWindow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.start, self.end).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DateWindow {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (start, end) = <(NaiveDate, NaiveDate)>::deserialize(deserializer)?;
        Ok(DateWindow { start, end })
    }
}

/// Which quantity a [`DailySeries`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    PoiPharmacy,
    PoiGas,
    PoiEssential,
    PoiNonessential,
    CcEssential,
    CcNonessential,
    EvacuationRate,
    DownloadKbps,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::PoiPharmacy,
        MetricKind::PoiGas,
        MetricKind::PoiEssential,
        MetricKind::PoiNonessential,
        MetricKind::CcEssential,
        MetricKind::CcNonessential,
        MetricKind::EvacuationRate,
        MetricKind::DownloadKbps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::PoiPharmacy => "poi_pharmacy",
            MetricKind::PoiGas => "poi_gas",
            MetricKind::PoiEssential => "poi_essential",
            MetricKind::PoiNonessential => "poi_nonessential",
            MetricKind::CcEssential => "cc_essential",
            MetricKind::CcNonessential => "cc_nonessential",
            MetricKind::EvacuationRate => "evacuation_rate",
            MetricKind::DownloadKbps => "download_kbps",
        }
    }

    pub fn family(self) -> Option<MetricFamily> {
        match self {
            MetricKind::PoiPharmacy
            | MetricKind::PoiGas
            | MetricKind::PoiEssential
            | MetricKind::PoiNonessential => Some(MetricFamily::PoiVisits),
            MetricKind::CcEssential | MetricKind::CcNonessential => {
                Some(MetricFamily::CardTransactions)
            }
            MetricKind::DownloadKbps => Some(MetricFamily::SpeedTests),
            MetricKind::EvacuationRate => None,
        }
    }

    /// Counts are additive; rates are sampled and get averaged.
    pub fn is_additive(self) -> bool {
        !matches!(self, MetricKind::DownloadKbps | MetricKind::EvacuationRate)
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown metric kind `{s}`")))
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Group of metric kinds that share one daily-series input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    PoiVisits,
    CardTransactions,
    SpeedTests,
}

impl MetricFamily {
    pub fn contains(self, metric: MetricKind) -> bool {
        metric.family() == Some(self)
    }
}

/// Date-indexed values for one (CBG, metric) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub cbg: CbgId,
    pub metric: MetricKind,
    pub values: BTreeMap<NaiveDate, f64>,
}

impl DailySeries {
    pub fn new(cbg: CbgId, metric: MetricKind) -> Self {
        DailySeries {
            cbg,
            metric,
            values: BTreeMap::new(),
        }
    }

    pub fn from_values(
        cbg: CbgId,
        metric: MetricKind,
        values: impl IntoIterator<Item = (NaiveDate, f64)>,
    ) -> Self {
        DailySeries {
            cbg,
            metric,
            values: values.into_iter().collect(),
        }
    }

    pub fn in_window(&self, window: DateWindow) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.values
            .range(window.start..=window.end)
            .map(|(d, v)| (*d, *v))
    }
}

/// The eleven per-CBG features, in their canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    PreparednessProactivity,
    EvacuationRateChange,
    FloodedRoadLength,
    ClaimCount,
    TotalDamageUsd,
    DamageRatio,
    TelecomDisruption,
    RecoveryEssentialActivity,
    RecoveryNonessentialActivity,
    RecoveryCcEssential,
    RecoveryCcNonessential,
}

impl Feature {
    pub const COUNT: usize = 11;

    pub const ALL: [Feature; 11] = [
        Feature::PreparednessProactivity,
        Feature::EvacuationRateChange,
        Feature::FloodedRoadLength,
        Feature::ClaimCount,
        Feature::TotalDamageUsd,
        Feature::DamageRatio,
        Feature::TelecomDisruption,
        Feature::RecoveryEssentialActivity,
        Feature::RecoveryNonessentialActivity,
        Feature::RecoveryCcEssential,
        Feature::RecoveryCcNonessential,
    ];

    /// Components of the composite risk index.
    pub const RISK: [Feature; 7] = [
        Feature::FloodedRoadLength,
        Feature::ClaimCount,
        Feature::TotalDamageUsd,
        Feature::DamageRatio,
        Feature::TelecomDisruption,
        Feature::PreparednessProactivity,
        Feature::EvacuationRateChange,
    ];

    /// Components of the composite resilience index.
    pub const RECOVERY: [Feature; 4] = [
        Feature::RecoveryEssentialActivity,
        Feature::RecoveryNonessentialActivity,
        Feature::RecoveryCcEssential,
        Feature::RecoveryCcNonessential,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::PreparednessProactivity => "preparedness_proactivity",
            Feature::EvacuationRateChange => "evacuation_rate_change",
            Feature::FloodedRoadLength => "flooded_road_length",
            Feature::ClaimCount => "claim_count",
            Feature::TotalDamageUsd => "total_damage_usd",
            Feature::DamageRatio => "damage_ratio",
            Feature::TelecomDisruption => "telecom_disruption",
            Feature::RecoveryEssentialActivity => "recovery_essential_activity",
            Feature::RecoveryNonessentialActivity => "recovery_nonessential_activity",
            Feature::RecoveryCcEssential => "recovery_cc_essential",
            Feature::RecoveryCcNonessential => "recovery_cc_nonessential",
        }
    }

    pub fn is_recovery(self) -> bool {
        Feature::RECOVERY.contains(&self)
    }

    /// Position within the four censor flags, for recovery features.
    pub fn recovery_slot(self) -> Option<usize> {
        Feature::RECOVERY.iter().position(|f| *f == self)
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown feature `{s}`")))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-CBG feature values. `None` marks a missing feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub cbg: CbgId,
    pub preparedness_proactivity: Option<f64>,
    pub evacuation_rate_change: Option<f64>,
    pub flooded_road_length: Option<f64>,
    pub claim_count: u64,
    pub total_damage_usd: f64,
    pub damage_ratio: Option<f64>,
    pub telecom_disruption: Option<f64>,
    pub recovery_essential_activity: Option<f64>,
    pub recovery_nonessential_activity: Option<f64>,
    pub recovery_cc_essential: Option<f64>,
    pub recovery_cc_nonessential: Option<f64>,
    /// One flag per recovery feature, in [`Feature::RECOVERY`] order.
    pub censored_flags: [bool; 4],
}

impl FeatureVector {
    pub fn empty(cbg: CbgId) -> Self {
        FeatureVector {
            cbg,
            preparedness_proactivity: None,
            evacuation_rate_change: None,
            flooded_road_length: None,
            claim_count: 0,
            total_damage_usd: 0.0,
            damage_ratio: None,
            telecom_disruption: None,
            recovery_essential_activity: None,
            recovery_nonessential_activity: None,
            recovery_cc_essential: None,
            recovery_cc_nonessential: None,
            censored_flags: [false; 4],
        }
    }

    pub fn get(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::PreparednessProactivity => self.preparedness_proactivity,
            Feature::EvacuationRateChange => self.evacuation_rate_change,
            Feature::FloodedRoadLength => self.flooded_road_length,
            Feature::ClaimCount => Some(self.claim_count as f64),
            Feature::TotalDamageUsd => Some(self.total_damage_usd),
            Feature::DamageRatio => self.damage_ratio,
            Feature::TelecomDisruption => self.telecom_disruption,
            Feature::RecoveryEssentialActivity => self.recovery_essential_activity,
            Feature::RecoveryNonessentialActivity => self.recovery_nonessential_activity,
            Feature::RecoveryCcEssential => self.recovery_cc_essential,
            Feature::RecoveryCcNonessential => self.recovery_cc_nonessential,
        }
    }

    /// Sets an optional-valued feature. Claim count and damage total are
    /// always present and are assigned directly.
    pub fn set(&mut self, feature: Feature, value: Option<f64>) {
        let slot = match feature {
            Feature::PreparednessProactivity => &mut self.preparedness_proactivity,
            Feature::EvacuationRateChange => &mut self.evacuation_rate_change,
            Feature::FloodedRoadLength => &mut self.flooded_road_length,
            Feature::DamageRatio => &mut self.damage_ratio,
            Feature::TelecomDisruption => &mut self.telecom_disruption,
            Feature::RecoveryEssentialActivity => &mut self.recovery_essential_activity,
            Feature::RecoveryNonessentialActivity => &mut self.recovery_nonessential_activity,
            Feature::RecoveryCcEssential => &mut self.recovery_cc_essential,
            Feature::RecoveryCcNonessential => &mut self.recovery_cc_nonessential,
            Feature::ClaimCount => {
                self.claim_count = value.unwrap_or(0.0) as u64;
                return;
            }
            Feature::TotalDamageUsd => {
                self.total_damage_usd = value.unwrap_or(0.0);
                return;
            }
        };
        *slot = value;
    }

    pub fn values(&self) -> [Option<f64>; Feature::COUNT] {
        Feature::ALL.map(|f| self.get(f))
    }

    pub fn is_complete(&self) -> bool {
        self.values().iter().all(|v| v.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskResiliencePoint {
    pub cbg: CbgId,
    pub risk_index: f64,
    pub resilience_index: f64,
}

/// Quadrant of the risk/resilience plane. First letter is risk, second resilience.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchetypeLabel {
    HH,
    HL,
    LH,
    LL,
}

impl ArchetypeLabel {
    pub const ALL: [ArchetypeLabel; 4] = [
        ArchetypeLabel::HH,
        ArchetypeLabel::HL,
        ArchetypeLabel::LH,
        ArchetypeLabel::LL,
    ];

    pub fn from_levels(high_risk: bool, high_resilience: bool) -> Self {
        match (high_risk, high_resilience) {
            (true, true) => ArchetypeLabel::HH,
            (true, false) => ArchetypeLabel::HL,
            (false, true) => ArchetypeLabel::LH,
            (false, false) => ArchetypeLabel::LL,
        }
    }

    pub fn is_high_risk(self) -> bool {
        matches!(self, ArchetypeLabel::HH | ArchetypeLabel::HL)
    }

    pub fn is_high_resilience(self) -> bool {
        matches!(self, ArchetypeLabel::HH | ArchetypeLabel::LH)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArchetypeLabel::HH => "HH",
            ArchetypeLabel::HL => "HL",
            ArchetypeLabel::LH => "LH",
            ArchetypeLabel::LL => "LL",
        }
    }
}

impl FromStr for ArchetypeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchetypeLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown archetype label `{s}`")))
    }
}

impl fmt::Display for ArchetypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the trailing window of daily percent changes is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollingAggregation {
    /// Mean over the days present in the window.
    #[default]
    Mean,
    /// Plain sum over the window, as the formula is printed.
    Sum,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

fn window(start: (u32, u32), end: (u32, u32)) -> DateWindow {
    DateWindow::new(date(2017, start.0, start.1), date(2017, end.0, end.1))
}

/// Analysis windows and tuning knobs. Defaults cover Hurricane Harvey in
/// Harris County (landfall 2017-08-25).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub landfall_date: NaiveDate,
    pub preparedness_window: DateWindow,
    pub poi_baseline_window: DateWindow,
    pub evac_baseline_window: DateWindow,
    pub evac_event_window: DateWindow,
    pub traffic_event_window: DateWindow,
    pub telecom_baseline_window: DateWindow,
    pub telecom_min_window: DateWindow,
    pub recovery_baseline_window: DateWindow,
    pub recovery_observation_end: NaiveDate,
    pub recovery_threshold_pct: f64,
    pub rolling_window_days: u32,
    pub rolling_aggregation: RollingAggregation,
    /// Minimum total null-speed time (minutes) for a road segment to count as flooded.
    pub min_null_duration_minutes: u32,
    pub k_clusters: usize,
    /// Independent k-means++ starts; the lowest-inertia fit is kept.
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            landfall_date: date(2017, 8, 25),
            preparedness_window: window((8, 20), (8, 25)),
            poi_baseline_window: window((8, 1), (8, 14)),
            evac_baseline_window: window((7, 9), (8, 5)),
            evac_event_window: window((8, 6), (9, 30)),
            traffic_event_window: window((8, 20), (9, 11)),
            telecom_baseline_window: window((8, 1), (8, 14)),
            telecom_min_window: window((8, 24), (9, 3)),
            recovery_baseline_window: window((8, 1), (8, 21)),
            recovery_observation_end: date(2017, 9, 30),
            recovery_threshold_pct: 0.90,
            rolling_window_days: 7,
            rolling_aggregation: RollingAggregation::Mean,
            min_null_duration_minutes: 0,
            k_clusters: 4,
            restarts: 10,
            rng_seed: 42,
        }
    }
}

impl AnalysisConfig {
    pub fn windows(&self) -> [(&'static str, DateWindow); 8] {
        [
            ("preparedness_window", self.preparedness_window),
            ("poi_baseline_window", self.poi_baseline_window),
            ("evac_baseline_window", self.evac_baseline_window),
            ("evac_event_window", self.evac_event_window),
            ("traffic_event_window", self.traffic_event_window),
            ("telecom_baseline_window", self.telecom_baseline_window),
            ("telecom_min_window", self.telecom_min_window),
            ("recovery_baseline_window", self.recovery_baseline_window),
        ]
    }

    /// Days from landfall to the end of recovery observation.
    pub fn observation_span_days(&self) -> i64 {
        (self.recovery_observation_end - self.landfall_date).num_days()
    }

    /// Reads a TOML or JSON config, chosen by file extension.
    pub fn from_path(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }
}

/// Lists every violated config invariant. An empty list means the config is valid.
pub fn validate_config(cfg: &AnalysisConfig) -> Vec<String> {
    let mut violations = Vec::new();
    for (name, w) in cfg.windows() {
        if !w.is_valid() {
            violations.push(format!("{name}: start {} is after end {}", w.start, w.end));
        }
    }
    if cfg.recovery_observation_end < cfg.landfall_date {
        violations.push(format!(
            "recovery_observation_end: {} precedes landfall_date {}",
            cfg.recovery_observation_end, cfg.landfall_date
        ));
    }
    if !(cfg.recovery_threshold_pct > 0.0 && cfg.recovery_threshold_pct <= 1.0) {
        violations.push(format!(
            "recovery_threshold_pct: {} is outside (0, 1]",
            cfg.recovery_threshold_pct
        ));
    }
    if cfg.rolling_window_days < 1 {
        violations.push("rolling_window_days: must be at least 1".to_string());
    }
    if cfg.k_clusters < 2 {
        violations.push(format!("k_clusters: {} is below the minimum of 2", cfg.k_clusters));
    }
    if cfg.restarts < 1 {
        violations.push("restarts: must be at least 1".to_string());
    }
    violations
}
