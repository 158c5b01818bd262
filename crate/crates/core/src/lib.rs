//! Ex-post community risk and resilience assessment.
//!
//! The pipeline ingests event-period datasets, computes eleven coupled
//! human-infrastructure features per census block group (CBG), clusters CBGs
//! with k-means, builds composite risk and resilience indices and labels each
//! cluster with one of four risk/resilience archetypes.

pub mod error;
pub mod features;
pub mod geometry;
pub mod ingest;
pub mod model;
pub mod stats;
pub mod indices;
pub mod clustering;
pub mod archetypes;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    validate_config, AnalysisConfig, ArchetypeLabel, CbgId, DailySeries, DateWindow, Feature,
    FeatureVector, MetricFamily, MetricKind, RiskResiliencePoint, RollingAggregation,
};
