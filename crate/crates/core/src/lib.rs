//! Normal-behaviour condition monitoring for fleets of similar machines.
//!
//! A branching probabilistic MLP predicts a Gaussian density of output power
//! from operating features. Models can be trained per unit, or pre-trained on
//! the pooled fleet and fine-tuned per unit. Standardized residuals feed a
//! two-sided tabular CUSUM chart that raises fault alarms.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod monitor;
pub mod nn;
pub mod training;

pub use data::{RowStatus, TurbineDataset};
pub use error::{Error, ErrorClass, Result};
pub use metrics::{EvaluationReport, PointErrors};
pub use model::{ArchitectureSpec, GaussianPrediction, LoadedModel, ModelBundle};
pub use monitor::{CusumState, MonitorConfig, WindowLabel};
pub use nn::{AdamState, ParameterSet};
pub use training::{Split, SplitSpec, TrainConfig, TrainHistory};
