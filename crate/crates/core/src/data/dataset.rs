use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SCADA records are 10-minute aggregates.
pub const DEFAULT_CADENCE_MINUTES: i64 = 10;

pub fn default_cadence() -> Duration {
    Duration::minutes(DEFAULT_CADENCE_MINUTES)
}

/// Operational status of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Normal,
    Standby,
    Warning,
    Stop,
    ForcedOutage,
    PreOutageWindow,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Normal => "normal",
            RowStatus::Standby => "standby",
            RowStatus::Warning => "warning",
            RowStatus::Stop => "stop",
            RowStatus::ForcedOutage => "forced_outage",
            RowStatus::PreOutageWindow => "pre_outage_window",
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RowStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "" | "normal" => RowStatus::Normal,
            "standby" => RowStatus::Standby,
            "warning" => RowStatus::Warning,
            "stop" => RowStatus::Stop,
            "forced_outage" => RowStatus::ForcedOutage,
            "pre_outage_window" => RowStatus::PreOutageWindow,
            other => return Err(Error::Data(format!("unknown row status {other:?}"))),
        })
    }
}

/// Time-indexed features and observed power of one unit.
///
/// Features are stored row-major, `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineDataset {
    unit_id: String,
    feature_names: Vec<String>,
    timestamps: Vec<DateTime<Utc>>,
    features: Vec<f64>,
    target: Vec<f64>,
    status: Vec<RowStatus>,
}

impl TurbineDataset {
    pub fn new(
        unit_id: impl Into<String>,
        feature_names: Vec<String>,
        timestamps: Vec<DateTime<Utc>>,
        features: Vec<f64>,
        target: Vec<f64>,
        status: Vec<RowStatus>,
    ) -> Result<Self> {
        let n = timestamps.len();
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::Shape("dataset needs at least one feature".into()));
        }
        if features.len() != n * d || target.len() != n || status.len() != n {
            return Err(Error::Shape(format!(
                "dataset rows disagree: {n} timestamps, {} feature values for {d} features, {} targets, {} statuses",
                features.len(),
                target.len(),
                status.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at row {}: {} then {}",
                w + 1,
                timestamps[w],
                timestamps[w + 1]
            )));
        }
        Ok(Self {
            unit_id: unit_id.into(),
            feature_names,
            timestamps,
            features,
            target,
            status,
        })
    }

    pub fn unit_id(&self) -> &str {
        &self.unit_id
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn status(&self) -> &[RowStatus] {
        &self.status
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    /// `(features, target)` pairs in row order.
    pub fn samples(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.features
            .chunks_exact(self.n_features())
            .zip(self.target.iter().copied())
    }

    /// Rows at `indices`, re-sorted by time.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let d = self.n_features();
        let mut features = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            unit_id: self.unit_id.clone(),
            feature_names: self.feature_names.clone(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            features,
            target: idx.iter().map(|&i| self.target[i]).collect(),
            status: idx.iter().map(|&i| self.status[i]).collect(),
        }
    }

    /// Rows whose timestamp lies in `[start, end)`.
    pub fn slice_time(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        let lo = self.timestamps.partition_point(|t| *t < start);
        let hi = self.timestamps.partition_point(|t| *t < end);
        let idx: Vec<usize> = (lo..hi).collect();
        self.select(&idx)
    }

    /// Same rows with a new feature matrix (used by normalization).
    pub(crate) fn with_features(&self, feature_names: Vec<String>, features: Vec<f64>) -> Result<Self> {
        Self::new(
            self.unit_id.clone(),
            feature_names,
            self.timestamps.clone(),
            features,
            self.target.clone(),
            self.status.clone(),
        )
    }
}
