//! Chronological splitting, minibatch training with early stopping, fleet
//! pre-training on pooled rows and per-unit fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TurbineDataset;
use crate::error::{Error, Result};
use crate::model::{self, ArchitectureSpec};
use crate::nn::{self, AdamState, ParameterSet, Workspace};

/// Optimizer and stopping settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::single_unit()
    }
}

impl TrainConfig {
    /// Single-unit training: Adam at 1e-3, batches of 32, 100 epochs.
    pub fn single_unit() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
        }
    }

    /// Fleet pre-training: as single-unit, for 500 epochs.
    pub fn fleet_pretrain() -> Self {
        Self {
            max_epochs: 500,
            ..Self::single_unit()
        }
    }

    /// Fine-tuning: 50 epochs; 1e-4 for the wide A2 layout, 1e-3 otherwise.
    pub fn finetune_for(arch: &ArchitectureSpec) -> Self {
        let a2 = ArchitectureSpec::a2();
        let is_a2 = arch.trunk_widths == a2.trunk_widths
            && arch.mean_widths == a2.mean_widths
            && arch.stddev_widths == a2.stddev_widths;
        Self {
            learning_rate: if is_a2 { 1e-4 } else { 1e-3 },
            max_epochs: 50,
            ..Self::single_unit()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("early-stopping patience must be positive".into()));
        }
        Ok(())
    }
}

/// Chronological test hold-out, then a shuffled validation carve-out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction_of_train: f64,
}

impl Default for SplitSpec {
    /// 80/20 train/test, then 72/8 train/validation.
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            validation_fraction_of_train: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("test", self.test_fraction), ("validation", self.validation_fraction_of_train)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} fraction must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: TurbineDataset,
    pub validation: TurbineDataset,
    pub test: TurbineDataset,
}

/// The latest `test_fraction` of rows becomes the test set. The remaining rows
/// are shuffled with `seed` and `validation_fraction_of_train` of them is
/// carved out for validation. Train and validation keep time order.
///
/// Validation may come out empty for tiny inputs; test and train may not.
pub fn split_chronological(dataset: &TurbineDataset, spec: &SplitSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    let n = dataset.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_rest = n.saturating_sub(n_test);
    let n_val = (n_rest as f64 * spec.validation_fraction_of_train).round() as usize;
    if n_test == 0 || n_rest <= n_val {
        return Err(Error::Config(format!(
            "{n} rows are too few for a {}/{} split",
            spec.test_fraction, spec.validation_fraction_of_train
        )));
    }
    let mut rest: Vec<usize> = (0..n_rest).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = rest.split_at(n_val);
    let test_idx: Vec<usize> = (n_rest..n).collect();
    Ok(Split {
        train: dataset.select(train_idx),
        validation: dataset.select(val_idx),
        test: dataset.select(&test_idx),
    })
}

/// Per-epoch mean negative log-likelihoods. Entry 0 is the model before any
/// update; entry `e` follows epoch `e`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len().saturating_sub(1)
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            out.push_str(&format!("{e},{t:?},{v:?}\n"));
        }
        out
    }
}

/// Trains a fresh network on one unit.
pub fn train_pmlp(
    arch: &ArchitectureSpec,
    train: &TurbineDataset,
    validation: &TurbineDataset,
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainHistory)> {
    let init = model::build(arch, config.seed)?;
    fit(arch, init, &[train], &[validation], config)
}

/// Trains one shared network on the pooled rows of every unit.
pub fn pretrain_farm(
    arch: &ArchitectureSpec,
    fleet_train: &[TurbineDataset],
    fleet_validation: &[TurbineDataset],
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainHistory)> {
    check_fleet_schema(fleet_train.iter().chain(fleet_validation))?;
    let init = model::build(arch, config.seed)?;
    let train: Vec<&TurbineDataset> = fleet_train.iter().collect();
    let val: Vec<&TurbineDataset> = fleet_validation.iter().collect();
    fit(arch, init, &train, &val, config)
}

/// Continues training a pre-trained network on a single unit.
pub fn finetune(
    pretrained: &ParameterSet,
    arch: &ArchitectureSpec,
    unit_train: &TurbineDataset,
    unit_validation: &TurbineDataset,
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainHistory)> {
    arch.check_parameters(pretrained)?;
    fit(arch, pretrained.clone(), &[unit_train], &[unit_validation], config)
}

/// Summed negative log-likelihood over every row of every unit.
pub fn pooled_nll(params: &ParameterSet, arch: &ArchitectureSpec, fleet: &[TurbineDataset]) -> Result<f64> {
    fleet.iter().map(|ds| model::batch_nll(params, arch, ds)).sum()
}

fn check_fleet_schema<'a>(mut units: impl Iterator<Item = &'a TurbineDataset>) -> Result<()> {
    let Some(first) = units.next() else {
        return Err(Error::Config("fleet is empty".into()));
    };
    for u in units {
        if u.feature_names() != first.feature_names() {
            return Err(Error::Config(format!(
                "unit {} feature schema differs from unit {}",
                u.unit_id(),
                first.unit_id()
            )));
        }
    }
    Ok(())
}

fn mean_nll(params: &ParameterSet, arch: &ArchitectureSpec, sets: &[&TurbineDataset]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ds in sets.iter().filter(|d| !d.is_empty()) {
        total += model::batch_nll(params, arch, ds)?;
        n += ds.len();
    }
    Ok(total / n as f64)
}

fn fit(
    arch: &ArchitectureSpec,
    init: ParameterSet,
    train: &[&TurbineDataset],
    validation: &[&TurbineDataset],
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainHistory)> {
    config.validate()?;
    arch.validate()?;
    arch.check_parameters(&init)?;
    for ds in train.iter().chain(validation) {
        if ds.n_features() != arch.input_dim {
            return Err(Error::Config(format!(
                "unit {} has {} features, architecture expects {}",
                ds.unit_id(),
                ds.n_features(),
                arch.input_dim
            )));
        }
    }
    let mut index: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(u, ds)| (0..ds.len()).map(move |r| (u, r)))
        .collect();
    if index.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if validation.iter().all(|d| d.is_empty()) {
        return Err(Error::Config("validation set is empty; early stopping needs one".into()));
    }
    if config.batch_size > index.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training rows",
            config.batch_size,
            index.len()
        )));
    }

    let scale = arch.output_scale;
    let ln_scale = scale.ln();
    let mut params = init;
    let mut best = params.clone();
    let mut history = TrainHistory {
        train_loss: vec![mean_nll(&params, arch, train)?],
        val_loss: vec![mean_nll(&params, arch, validation)?],
        best_epoch: 0,
        stopped_early: false,
    };
    if !history.val_loss[0].is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            batch: 0,
            detail: "initial validation loss is not finite".into(),
        });
    }

    let mut adam = AdamState::new(params.flat_len(), config.learning_rate);
    let mut ws = Workspace::new(&params);
    let mut grad = params.zeros_like();
    let mut flat_grad = vec![0.0; params.flat_len()];

    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        index.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (b, chunk) in index.chunks(config.batch_size).enumerate() {
            grad.scalars_mut().for_each(|g| *g = 0.0);
            let rows = chunk.iter().map(|&(u, r)| (train[u].row(r), train[u].target()[r] / scale));
            let loss = nn::loss_and_gradient(&params, arch.delta, rows, &mut ws, &mut grad).map_err(|e| {
                Error::Diverged {
                    epoch,
                    batch: b,
                    detail: e.to_string(),
                }
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {loss}"),
                });
            }
            epoch_loss += loss + chunk.len() as f64 * ln_scale;
            let inv = 1.0 / chunk.len() as f64;
            for (dst, g) in flat_grad.iter_mut().zip(grad.scalars()) {
                *dst = g * inv;
            }
            adam.step(&mut params, &flat_grad).map_err(|e| Error::Diverged {
                epoch,
                batch: b,
                detail: e.to_string(),
            })?;
        }

        let val = mean_nll(&params, arch, validation)?;
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: index.len().div_ceil(config.batch_size),
                detail: format!("validation loss {val}"),
            });
        }
        history.train_loss.push(epoch_loss / index.len() as f64);
        history.val_loss.push(val);
        if val < history.val_loss[history.best_epoch] {
            history.best_epoch = epoch;
            best.clone_from(&params);
        } else if epoch - history.best_epoch >= config.early_stop_patience {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}
