//! Datasets, ingestion, event filtering, normalization and simulation.

mod dataset;
pub mod events;
pub mod ingest;
mod normalize;
pub mod sim;
pub mod windows;

pub use dataset::{default_cadence, RowStatus, TurbineDataset, DEFAULT_CADENCE_MINUTES};
pub use events::{filter_events, Event, EventCategory, EventLog, FilterReport};
pub use ingest::{ingest, ingest_auto, ingest_reader, FeatureColumn, FeatureKind, IngestReport, Schema};
pub use normalize::{
    apply_normalization, fit_normalization, fit_normalization_pooled, normalize_row, ConstantFeaturePolicy, FeatureStat,
    NormalizationStats,
};
pub use sim::{simulate_fleet, FaultKind, FaultSpec, SimConfig, SimFeatureSet, SimulatedFleet};
