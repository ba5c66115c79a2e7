//! The branching probabilistic MLP: a shared ReLU trunk followed by separate
//! mean and standard-deviation paths. The mean head is linear; the
//! standard-deviation head goes through a shifted softplus so every predicted
//! standard deviation is at least `delta`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NormalizationStats, TurbineDataset};
use crate::error::{Error, Result};
use crate::nn::{self, DenseLayer, LayerGroup, ParameterSet, Workspace};
use crate::training::{SplitSpec, TrainConfig, TrainHistory};

/// Softplus shift used unless a spec overrides it.
pub const DEFAULT_DELTA: f64 = 0.001;

fn default_output_scale() -> f64 {
    1.0
}

/// Layer widths of a branching network.
///
/// `trunk_widths` are the shared hidden layers; `mean_widths` and
/// `stddev_widths` are the hidden layers of each path after the branch point.
/// Both paths end in a width-1 head that is not listed. Network outputs are
/// multiplied by `output_scale` to express them in target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub trunk_widths: Vec<usize>,
    #[serde(default)]
    pub mean_widths: Vec<usize>,
    #[serde(default)]
    pub stddev_widths: Vec<usize>,
    pub delta: f64,
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

impl ArchitectureSpec {
    pub fn new(input_dim: usize, trunk: &[usize], mean: &[usize], stddev: &[usize]) -> Self {
        Self {
            input_dim,
            trunk_widths: trunk.to_vec(),
            mean_widths: mean.to_vec(),
            stddev_widths: stddev.to_vec(),
            delta: DEFAULT_DELTA,
            output_scale: 1.0,
        }
    }

    /// 41 inputs, shared 100-80-40 trunk, one 20-wide layer per path.
    pub fn a1() -> Self {
        Self::new(41, &[100, 80, 40], &[20], &[20])
    }

    /// 41 inputs, shared 300-200-100 trunk, heads directly on the trunk.
    pub fn a2() -> Self {
        Self::new(41, &[300, 200, 100], &[], &[])
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "a1" => Some(Self::a1()),
            "a2" => Some(Self::a2()),
            _ => None,
        }
    }

    pub fn with_input_dim(mut self, input_dim: usize) -> Self {
        self.input_dim = input_dim;
        self
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunk_widths.is_empty() {
            return Err(Error::Config("architecture needs at least one shared trunk layer".into()));
        }
        let all = std::iter::once(&self.input_dim)
            .chain(&self.trunk_widths)
            .chain(&self.mean_widths)
            .chain(&self.stddev_widths);
        if all.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("softplus shift must be non-negative, got {}", self.delta)));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::Config(format!("output scale must be positive, got {}", self.output_scale)));
        }
        Ok(())
    }

    /// Layer shapes `(group, d_in, d_out)` in flat parameter order.
    pub fn layer_shapes(&self) -> Vec<(LayerGroup, usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim;
        for &w in &self.trunk_widths {
            shapes.push((LayerGroup::Trunk, width, w));
            width = w;
        }
        for (group, hidden) in [(LayerGroup::Mean, &self.mean_widths), (LayerGroup::StdDev, &self.stddev_widths)] {
            let mut w_in = width;
            for &w in hidden {
                shapes.push((group, w_in, w));
                w_in = w;
            }
            shapes.push((group, w_in, 1));
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(_, i, o)| i * o + o).sum()
    }

    /// Total number of hidden layers, counting shared layers once.
    pub fn hidden_layers(&self) -> usize {
        self.trunk_widths.len() + self.mean_widths.len() + self.stddev_widths.len()
    }

    pub fn zero_parameters(&self) -> Result<ParameterSet> {
        self.validate()?;
        let mut groups: [Vec<DenseLayer>; 3] = Default::default();
        for (g, i, o) in self.layer_shapes() {
            let slot = match g {
                LayerGroup::Trunk => 0,
                LayerGroup::Mean => 1,
                LayerGroup::StdDev => 2,
            };
            groups[slot].push(DenseLayer::zeros(i, o));
        }
        let [t, m, s] = groups;
        ParameterSet::new(t, m, s)
    }

    /// Errors unless `params` has exactly this architecture's layer shapes.
    pub fn check_parameters(&self, params: &ParameterSet) -> Result<()> {
        if params.shapes() != self.layer_shapes() {
            return Err(Error::Config(format!(
                "arch mismatch: parameters have {} layers / {} scalars, architecture expects {} / {}",
                params.shapes().len(),
                params.flat_len(),
                self.layer_shapes().len(),
                self.param_count()
            )));
        }
        Ok(())
    }
}

/// Predictive density for one interval, in target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub stddev: f64,
}

/// He-uniform weights (limit `sqrt(6 / fan_in)`), zero biases.
pub fn build(arch: &ArchitectureSpec, seed: u64) -> Result<ParameterSet> {
    let mut params = arch.zero_parameters()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = |layers: &mut [DenseLayer], rng: &mut ChaCha8Rng| {
        for l in layers {
            let limit = (6.0 / l.d_in() as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("finite He limit");
            for w in l.weights_mut() {
                *w = dist.sample(rng);
            }
        }
    };
    init(params.trunk_mut(), &mut rng);
    init(params.mean_path_mut(), &mut rng);
    init(params.stddev_path_mut(), &mut rng);
    Ok(params)
}

fn heads_to_prediction(heads: nn::HeadOutputs, arch: &ArchitectureSpec) -> GaussianPrediction {
    GaussianPrediction {
        mean: arch.output_scale * heads.mean,
        stddev: arch.output_scale * nn::softplus(heads.stddev_logit, arch.delta),
    }
}

pub fn predict(params: &ParameterSet, arch: &ArchitectureSpec, x: &[f64]) -> Result<GaussianPrediction> {
    let mut ws = Workspace::new(params);
    predict_with(params, arch, x, &mut ws)
}

pub fn predict_with(
    params: &ParameterSet,
    arch: &ArchitectureSpec,
    x: &[f64],
    ws: &mut Workspace,
) -> Result<GaussianPrediction> {
    if x.len() != arch.input_dim {
        return Err(Error::Shape(format!(
            "input has {} features, architecture expects {}",
            x.len(),
            arch.input_dim
        )));
    }
    Ok(heads_to_prediction(nn::forward(params, x, ws)?, arch))
}

/// Predictions for every row, in row order. Rows are processed in parallel.
pub fn predict_dataset(
    params: &ParameterSet,
    arch: &ArchitectureSpec,
    dataset: &TurbineDataset,
) -> Result<Vec<GaussianPrediction>> {
    if dataset.n_features() != arch.input_dim {
        return Err(Error::Shape(format!(
            "dataset has {} features, architecture expects {}",
            dataset.n_features(),
            arch.input_dim
        )));
    }
    if dataset.is_empty() {
        return Ok(Vec::new());
    }
    dataset
        .features()
        .par_chunks(arch.input_dim)
        .map_init(|| Workspace::new(params), |ws, x| predict_with(params, arch, x, ws))
        .collect()
}

/// Summed negative log-likelihood of the dataset's targets.
pub fn batch_nll(params: &ParameterSet, arch: &ArchitectureSpec, dataset: &TurbineDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("loss requested on an empty dataset".into()));
    }
    let preds = predict_dataset(params, arch, dataset)?;
    preds
        .iter()
        .zip(dataset.target())
        .map(|(p, &y)| nn::nll_gaussian(y, p.mean, p.stddev))
        .sum()
}

pub const PARAMS_FORMAT: &str = "fleetmon-params";
pub const BUNDLE_FORMAT: &str = "fleetmon-model";
pub const FORMAT_VERSION: u32 = 1;

/// Architecture plus flat parameters. Values are written as shortest
/// round-trip decimal strings, so reading a document back is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub format: String,
    pub version: u32,
    pub arch: ArchitectureSpec,
    pub flat_params: Vec<String>,
}

impl ParamsDocument {
    pub fn new(arch: &ArchitectureSpec, params: &ParameterSet) -> Result<Self> {
        arch.check_parameters(params)?;
        Ok(Self {
            format: PARAMS_FORMAT.into(),
            version: FORMAT_VERSION,
            arch: arch.clone(),
            flat_params: params.scalars().map(|v| format!("{v:?}")).collect(),
        })
    }

    pub fn decode(&self) -> Result<(ArchitectureSpec, ParameterSet)> {
        if self.format != PARAMS_FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported parameter document {} v{}",
                self.format, self.version
            )));
        }
        let flat = self
            .flat_params
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<f64>()
                    .map_err(|e| Error::Schema(format!("parameter {i} ({s:?}): {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = self.arch.zero_parameters()?.with_flat(&flat)?;
        Ok((self.arch.clone(), params))
    }
}

/// How a bundle's parameters were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Single unit, trained from scratch.
    Pmlp,
    /// Trained on the pooled rows of a whole fleet.
    FleetPretrained,
    /// Fleet model fine-tuned on one unit.
    FineTuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub kind: ModelKind,
    pub units: Vec<String>,
    pub seed: u64,
    pub config: TrainConfig,
    pub split: Option<SplitSpec>,
    pub history: TrainHistory,
}

/// Everything needed to predict from raw features: architecture, parameters,
/// feature normalization and the provenance of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub model: ParamsDocument,
    pub normalization: NormalizationStats,
    pub metadata: TrainingMetadata,
}

/// A decoded bundle ready for prediction.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub arch: ArchitectureSpec,
    pub params: ParameterSet,
    pub normalization: NormalizationStats,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn new(
        arch: &ArchitectureSpec,
        params: &ParameterSet,
        normalization: NormalizationStats,
        metadata: TrainingMetadata,
    ) -> Result<Self> {
        if normalization.output_dim() != arch.input_dim {
            return Err(Error::Config(format!(
                "normalization yields {} features, architecture expects {}",
                normalization.output_dim(),
                arch.input_dim
            )));
        }
        Ok(Self {
            format: BUNDLE_FORMAT.into(),
            version: FORMAT_VERSION,
            model: ParamsDocument::new(arch, params)?,
            normalization,
            metadata,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let bundle: Self = serde_json::from_str(s)?;
        if bundle.format != BUNDLE_FORMAT || bundle.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model bundle {} v{}",
                bundle.format, bundle.version
            )));
        }
        Ok(bundle)
    }

    pub fn load(&self) -> Result<LoadedModel> {
        let (arch, params) = self.model.decode()?;
        if self.normalization.output_dim() != arch.input_dim {
            return Err(Error::Schema("bundle normalization disagrees with its architecture".into()));
        }
        Ok(LoadedModel {
            arch,
            params,
            normalization: self.normalization.clone(),
            metadata: self.metadata.clone(),
        })
    }
}

impl LoadedModel {
    /// Normalizes raw features and predicts every row.
    pub fn predict_raw(&self, raw: &TurbineDataset) -> Result<Vec<GaussianPrediction>> {
        let z = crate::data::apply_normalization(raw, &self.normalization)?;
        predict_dataset(&self.params, &self.arch, &z)
    }
}
