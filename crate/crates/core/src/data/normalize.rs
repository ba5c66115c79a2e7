//! Per-feature z-scoring fitted on a training split.

use serde::{Deserialize, Serialize};

use super::TurbineDataset;
use crate::error::{Error, Result};

/// What to do with a feature that is constant on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantFeaturePolicy {
    #[default]
    Drop,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Fitted normalization. `input_names` is the feature schema the statistics
/// were fitted on; `kept` lists the surviving features in output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub input_names: Vec<String>,
    pub kept: Vec<FeatureStat>,
    pub dropped: Vec<String>,
}

impl NormalizationStats {
    pub fn output_dim(&self) -> usize {
        self.kept.len()
    }

    pub fn output_names(&self) -> Vec<String> {
        self.kept.iter().map(|f| f.name.clone()).collect()
    }
}

pub fn fit_normalization(train: &TurbineDataset, policy: ConstantFeaturePolicy) -> Result<NormalizationStats> {
    fit_normalization_pooled(std::slice::from_ref(train), policy)
}

/// Statistics over the rows of several datasets sharing one feature schema.
pub fn fit_normalization_pooled(
    train: &[TurbineDataset],
    policy: ConstantFeaturePolicy,
) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("normalization needs at least one dataset".into()))?;
    let names = first.feature_names().to_vec();
    if let Some(bad) = train.iter().find(|d| d.feature_names() != names.as_slice()) {
        return Err(Error::Config(format!(
            "unit {} has a different feature schema than unit {}",
            bad.unit_id(),
            first.unit_id()
        )));
    }
    let n: usize = train.iter().map(TurbineDataset::len).sum();
    if n == 0 {
        return Err(Error::Data("cannot fit normalization on an empty training set".into()));
    }
    let d = names.len();
    let mut mean = vec![0.0; d];
    for ds in train {
        for (x, _) in ds.samples() {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for ds in train {
        for (x, _) in ds.samples() {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }

    let mut kept = Vec::with_capacity(d);
    let mut dropped = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let std = (var[j] / n as f64).sqrt();
        // Relative floor: a column that only varies in its last few bits is constant.
        if std <= 1e-12 * mean[j].abs().max(1.0) {
            match policy {
                ConstantFeaturePolicy::Drop => dropped.push(name.clone()),
                ConstantFeaturePolicy::Error => {
                    return Err(Error::Data(format!("feature {name:?} is constant on the training split")))
                }
            }
        } else {
            kept.push(FeatureStat {
                name: name.clone(),
                mean: mean[j],
                std,
            });
        }
    }
    if kept.is_empty() {
        return Err(Error::Data("every feature is constant on the training split".into()));
    }
    Ok(NormalizationStats {
        input_names: names,
        kept,
        dropped,
    })
}

/// Z-scores `dataset` with previously fitted statistics. Targets are untouched.
pub fn apply_normalization(dataset: &TurbineDataset, stats: &NormalizationStats) -> Result<TurbineDataset> {
    if dataset.feature_names() != stats.input_names.as_slice() {
        return Err(Error::Schema(format!(
            "dataset features {:?} do not match the normalization schema {:?}",
            dataset.feature_names(),
            stats.input_names
        )));
    }
    let columns: Vec<(usize, f64, f64)> = stats
        .kept
        .iter()
        .map(|f| {
            let j = stats.input_names.iter().position(|n| *n == f.name).expect("kept feature in schema");
            (j, f.mean, f.std)
        })
        .collect();
    let mut out = Vec::with_capacity(dataset.len() * columns.len());
    for (x, _) in dataset.samples() {
        out.extend(columns.iter().map(|&(j, m, s)| (x[j] - m) / s));
    }
    dataset.with_features(stats.output_names(), out)
}

/// Normalizes a single raw feature row.
pub fn normalize_row(raw: &[f64], stats: &NormalizationStats) -> Result<Vec<f64>> {
    if raw.len() != stats.input_names.len() {
        return Err(Error::Shape(format!(
            "row has {} features, normalization expects {}",
            raw.len(),
            stats.input_names.len()
        )));
    }
    Ok(stats
        .kept
        .iter()
        .map(|f| {
            let j = stats.input_names.iter().position(|n| *n == f.name).expect("kept feature in schema");
            (raw[j] - f.mean) / f.std
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RowStatus;
    use chrono::{Duration, TimeZone, Utc};

    fn dataset(cols: &[Vec<f64>]) -> TurbineDataset {
        let n = cols[0].len();
        let names = (0..cols.len()).map(|j| format!("f{j}")).collect();
        let mut features = Vec::new();
        for i in 0..n {
            features.extend(cols.iter().map(|c| c[i]));
        }
        let t0 = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
        TurbineDataset::new(
            "u1",
            names,
            (0..n).map(|i| t0 + Duration::minutes(10 * i as i64)).collect(),
            features,
            (0..n).map(|i| i as f64 * 100.0).collect(),
            vec![RowStatus::Normal; n],
        )
        .unwrap()
    }

    #[test]
    fn train_columns_standardize() {
        let ds = dataset(&[
            vec![1.0, 2.0, 3.0, 4.0, 10.0],
            vec![-5.0, 0.3, 0.1, 7.0, 2.0],
        ]);
        let stats = fit_normalization(&ds, ConstantFeaturePolicy::Drop).unwrap();
        let z = apply_normalization(&ds, &stats).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..z.len()).map(|i| z.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert_eq!(z.target(), ds.target());
    }

    #[test]
    fn constant_column_dropped_or_rejected() {
        let ds = dataset(&[vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]]);
        let stats = fit_normalization(&ds, ConstantFeaturePolicy::Drop).unwrap();
        assert_eq!(stats.dropped, vec!["f1".to_string()]);
        assert_eq!(stats.output_dim(), 1);
        assert_eq!(apply_normalization(&ds, &stats).unwrap().n_features(), 1);
        assert!(fit_normalization(&ds, ConstantFeaturePolicy::Error).is_err());
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let train = dataset(&[vec![0.0, 1.0, 2.0]]);
        let test = dataset(&[vec![5.0, 6.0, 7.0]]);
        let stats = fit_normalization(&train, ConstantFeaturePolicy::Drop).unwrap();
        let z = apply_normalization(&test, &stats).unwrap();
        let m = z.features().iter().sum::<f64>() / 3.0;
        assert!(m > 3.0);
        assert_eq!(normalize_row(&[1.0], &stats).unwrap(), vec![0.0]);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let a = dataset(&[vec![0.0, 1.0, 2.0]]);
        let b = dataset(&[vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0]]);
        let stats = fit_normalization(&a, ConstantFeaturePolicy::Drop).unwrap();
        assert!(matches!(apply_normalization(&b, &stats), Err(Error::Schema(_))));
        assert!(fit_normalization_pooled(&[a, b], ConstantFeaturePolicy::Drop).is_err());
    }
}
