use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::Duration;
use fleetmon_core::data::ingest::write_dataset_csv;
use fleetmon_core::data::windows::{self, WindowIndexEntry};
use fleetmon_core::data::{
    self, apply_normalization, filter_events, fit_normalization, fit_normalization_pooled, simulate_fleet,
    ConstantFeaturePolicy, EventLog, FaultKind, FaultSpec, SimConfig, SimFeatureSet,
};
use fleetmon_core::metrics;
use fleetmon_core::model::{ModelKind, TrainingMetadata};
use fleetmon_core::monitor::{
    run_window, standardize, sweep_decision_interval, write_alarms_jsonl, write_sweep_csv, LabeledWindow,
    MonitorMode, UnitMonitor,
};
use fleetmon_core::training::{finetune, pretrain_farm, split_chronological, train_pmlp};
use fleetmon_core::{
    ArchitectureSpec, Error, LoadedModel, ModelBundle, MonitorConfig, SplitSpec, TrainConfig, TurbineDataset,
};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::inputs::{config_error, load_config, load_dataset, regrid, require, schema_for, unit_for};
use crate::output::Run;

/// Global flags, shared by every subcommand.
pub struct Globals {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Globals {
    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }

    fn seed_or(&self, from_config: Option<u64>) -> u64 {
        self.seed.or(from_config).unwrap_or(0)
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> fleetmon_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_bundle(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading bundle {}", path.display()))?;
    Ok(ModelBundle::from_json(&text)?.load()?)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub simulation: SimConfig,
    /// Healthy windows cut per unit; `None` skips window export entirely.
    pub healthy_windows: Option<usize>,
    pub window_length: usize,
    /// Healthy windows keep this far from any logged event.
    pub window_clearance_days: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            simulation: SimConfig::default(),
            healthy_windows: None,
            window_length: 432,
            window_clearance_days: 7.0,
        }
    }
}

fn parse_fault(spec: &str, sim: &SimConfig) -> Result<FaultSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(config_error(format!("fault {spec:?}: expected UNIT:START_HOUR:HOURS[:SIGMAS]")));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| config_error(format!("fault {spec:?}: {s:?} is not a number")))
    };
    let unit_txt = parts[0].trim().trim_start_matches(['T', 't']);
    let unit: usize = unit_txt
        .parse()
        .ok()
        .filter(|&u: &usize| u >= 1)
        .ok_or_else(|| config_error(format!("fault {spec:?}: unit must be T01, T02, ... or 1, 2, ...")))?;
    let start_hours = num(parts[1])?;
    Ok(FaultSpec {
        unit: unit - 1,
        start: sim.start + Duration::milliseconds((start_hours * 3_600_000.0).round() as i64),
        duration_hours: num(parts[2])?,
        kind: FaultKind::Derate,
        shift_sigmas: parts.get(3).map(|s| num(s)).transpose()?,
    })
}

pub fn simulate(g: &Globals, a: &SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = load_config(g.config_path())?;
    let sim = &mut cfg.simulation;
    if let Some(n) = a.units {
        sim.n_units = n;
    }
    if let Some(rows) = &a.rows {
        sim.rows_per_unit = rows.clone();
    }
    if let Some(p) = a.rated_power {
        sim.curve.rated_power_kw = p;
    }
    if let Some(f) = a.features {
        sim.features = match f {
            FeatureSetArg::Compact => SimFeatureSet::Compact,
            FeatureSetArg::Operational => SimFeatureSet::Operational,
        };
    }
    if let Some(s) = a.shift_sigmas {
        sim.fault_shift_sigmas = s;
    }
    if !a.faults.is_empty() {
        sim.faults = a.faults.iter().map(|f| parse_fault(f, sim)).collect::<Result<_>>()?;
    }
    sim.seed = g.seed_or(Some(sim.seed));
    if let Some(h) = a.healthy_windows {
        cfg.healthy_windows = Some(h);
    }
    if let Some(l) = a.window_length {
        cfg.window_length = l;
    }
    if cfg.window_length == 0 {
        return Err(config_error("window length must be positive"));
    }

    let fleet = simulate_fleet(&cfg.simulation)?;
    let mut run = Run::new(&g.out_dir, "simulate", cfg.simulation.seed, g.config_path());
    let mut raw_csv = Vec::with_capacity(fleet.raw.len());
    for (u, table) in fleet.raw.iter().enumerate() {
        let bytes = table.to_csv_bytes()?;
        run.stage(format!("{}.csv", SimConfig::unit_id(u)), bytes.clone())?;
        raw_csv.push(bytes);
    }
    run.stage("events.csv", csv_bytes(|b| fleet.events.write_csv(b))?)?;
    run.stage("truth.csv", csv_bytes(|b| fleet.write_truth_csv(b))?)?;
    run.stage("schema.json", format!("{}\n", fleet.schema.to_json()?).into_bytes())?;

    if let Some(per_unit) = cfg.healthy_windows {
        let cadence = data::default_cadence();
        let clearance = Duration::milliseconds((cfg.window_clearance_days * 86_400_000.0).round() as i64);
        let mut index = Vec::new();
        for (u, ds) in fleet.datasets.iter().enumerate() {
            let mut specs = windows::fault_windows(ds.unit_id(), &fleet.events, cfg.window_length, cadence);
            specs.extend(windows::healthy_windows(
                ds,
                &fleet.events,
                cfg.window_length,
                per_unit,
                clearance,
                cadence,
                cfg.simulation.seed.wrapping_add(u as u64),
            ));
            for w in specs {
                let file = format!("{}.csv", w.id);
                let mut out = Vec::new();
                windows::slice_csv_by_time(raw_csv[u].as_slice(), &mut out, "timestamp", w.start, w.end)?;
                run.stage(Path::new("windows").join(&file), out)?;
                index.push(WindowIndexEntry {
                    window_id: w.id,
                    unit_id: w.unit_id,
                    file,
                    label: w.label,
                    onset: w.onset,
                });
            }
        }
        run.stage("windows/index.csv", csv_bytes(|b| windows::write_window_index(&index, b))?)?;
        eprintln!("cut {} windows", index.len());
    }
    run.commit(&cfg)?;
    Ok(())
}

// ---------------------------------------------------------------- ingest / filter

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub unit: Option<String>,
}

pub fn ingest(g: &Globals, a: &IngestArgs) -> Result<()> {
    let mut cfg: IngestConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.input, &a.input);
    override_opt(&mut cfg.schema, &a.schema);
    override_opt(&mut cfg.unit, &a.unit);
    let input = require(&cfg.input, "--input")?.clone();
    let unit = unit_for(&input, cfg.unit.as_ref());
    cfg.unit = Some(unit.clone());
    let schema = schema_for(&input, cfg.schema.as_deref(), None)?;
    let (ds, report) = load_dataset(&input, &unit, &schema)?;

    let mut run = Run::new(&g.out_dir, "ingest", g.seed_or(None), g.config_path());
    run.input(&input);
    if let Some(s) = &cfg.schema {
        run.input(s);
    }
    run.stage(format!("{unit}.csv"), csv_bytes(|b| write_dataset_csv(&ds, b))?)?;
    run.stage_json(format!("{unit}.ingest.json"), &report)?;
    run.commit(&cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub input: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub unit: Option<String>,
    pub pre_outage_days: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            input: None,
            events: None,
            schema: None,
            unit: None,
            pre_outage_days: 7.0,
        }
    }
}

pub fn filter(g: &Globals, a: &FilterArgs) -> Result<()> {
    let mut cfg: FilterConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.input, &a.input);
    override_opt(&mut cfg.events, &a.events);
    override_opt(&mut cfg.schema, &a.schema);
    override_opt(&mut cfg.unit, &a.unit);
    if let Some(d) = a.pre_outage_days {
        cfg.pre_outage_days = d;
    }
    let input = require(&cfg.input, "--input")?.clone();
    let events_path = require(&cfg.events, "--events")?.clone();
    let unit = unit_for(&input, cfg.unit.as_ref());
    cfg.unit = Some(unit.clone());
    let schema = schema_for(&input, cfg.schema.as_deref(), None)?;
    let (ds, _) = load_dataset(&input, &unit, &schema)?;
    let events = EventLog::load(&events_path)?;
    let (kept, report) = filter_events(&ds, &events, cfg.pre_outage_days, data::default_cadence())?;
    if report.empty {
        eprintln!("warning: no rows of {unit} survive filtering");
    }

    let mut run = Run::new(&g.out_dir, "filter", g.seed_or(None), g.config_path());
    run.input(&input);
    run.input(&events_path);
    run.stage(format!("{unit}.csv"), csv_bytes(|b| write_dataset_csv(&kept, b))?)?;
    run.stage_json(format!("{unit}.filter.json"), &report)?;
    run.commit(&cfg)?;
    Ok(())
}

fn override_opt<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

// ---------------------------------------------------------------- training

/// `"a1"`, `"a2"` or a full architecture object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset(String),
    Spec(ArchitectureSpec),
}

impl ArchChoice {
    fn from_flag(s: &str) -> Result<Self> {
        if ArchitectureSpec::preset(s).is_some() {
            return Ok(ArchChoice::Preset(s.to_ascii_lowercase()));
        }
        let text = std::fs::read_to_string(s)
            .map_err(|e| config_error(format!("--arch {s:?} is neither a1, a2 nor a readable file: {e}")))?;
        let spec: ArchitectureSpec =
            serde_json::from_str(&text).map_err(|e| config_error(format!("architecture {s}: {e}")))?;
        Ok(ArchChoice::Spec(spec))
    }

    /// Presets adapt to the data's input width; explicit specs must match it.
    fn resolve(&self, input_dim: usize) -> Result<ArchitectureSpec> {
        match self {
            ArchChoice::Preset(name) => ArchitectureSpec::preset(name)
                .map(|a| a.with_input_dim(input_dim))
                .ok_or_else(|| config_error(format!("unknown architecture preset {name:?}"))),
            ArchChoice::Spec(spec) if spec.input_dim != input_dim => Err(config_error(format!(
                "arch mismatch: architecture takes {} inputs, data provides {input_dim}",
                spec.input_dim
            ))),
            ArchChoice::Spec(spec) => Ok(spec.clone()),
        }
    }
}

/// Settings shared by train, pretrain and finetune. Unset optimizer fields
/// fall back to the subcommand's preset and are filled in before the
/// manifest is written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub arch: Option<ArchChoice>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub split: SplitSpec,
    pub schema: Option<PathBuf>,
    pub rated_power: f64,
    /// Targets are divided by this during training. Defaults to `rated_power`.
    pub output_scale: Option<f64>,
    pub constant_features: ConstantFeaturePolicy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            arch: None,
            learning_rate: None,
            batch_size: None,
            max_epochs: None,
            early_stop_patience: None,
            split: SplitSpec::default(),
            schema: None,
            rated_power: 2050.0,
            output_scale: None,
            constant_features: ConstantFeaturePolicy::default(),
        }
    }
}

impl FitConfig {
    fn apply(&mut self, a: &FitArgs) -> Result<()> {
        if let Some(s) = &a.arch {
            self.arch = Some(ArchChoice::from_flag(s)?);
        }
        override_opt(&mut self.learning_rate, &a.lr);
        override_opt(&mut self.batch_size, &a.batch_size);
        override_opt(&mut self.max_epochs, &a.epochs);
        override_opt(&mut self.early_stop_patience, &a.patience);
        override_opt(&mut self.schema, &a.schema);
        override_opt(&mut self.output_scale, &a.output_scale);
        if let Some(p) = a.rated_power {
            self.rated_power = p;
        }
        Ok(())
    }

    fn train_config(&mut self, base: TrainConfig, seed: u64) -> Result<TrainConfig> {
        let c = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            early_stop_patience: self.early_stop_patience.unwrap_or(base.early_stop_patience),
            seed,
        };
        c.validate()?;
        self.learning_rate = Some(c.learning_rate);
        self.batch_size = Some(c.batch_size);
        self.max_epochs = Some(c.max_epochs);
        self.early_stop_patience = Some(c.early_stop_patience);
        Ok(c)
    }

    fn architecture(&mut self, input_dim: usize) -> Result<ArchitectureSpec> {
        let choice = self.arch.get_or_insert_with(|| ArchChoice::Preset("a1".into()));
        let mut arch = choice.resolve(input_dim)?;
        if matches!(choice, ArchChoice::Preset(_)) || self.output_scale.is_some() {
            let scale = *self.output_scale.get_or_insert(self.rated_power);
            arch = arch.with_output_scale(scale);
        }
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub input: Option<PathBuf>,
    pub unit: Option<String>,
    pub seed: Option<u64>,
    pub fit: FitConfig,
}

pub fn train(g: &Globals, a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainCmdConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.input, &a.input);
    override_opt(&mut cfg.unit, &a.unit);
    cfg.fit.apply(&a.fit)?;
    let seed = g.seed_or(cfg.seed);
    cfg.seed = Some(seed);
    let input = require(&cfg.input, "--input")?.clone();
    let unit = unit_for(&input, cfg.unit.as_ref());
    cfg.unit = Some(unit.clone());

    let schema = schema_for(&input, cfg.fit.schema.as_deref(), None)?;
    let (ds, _) = load_dataset(&input, &unit, &schema)?;
    let split = split_chronological(&ds, &cfg.fit.split, seed)?;
    let norm = fit_normalization(&split.train, cfg.fit.constant_features)?;
    let arch = cfg.fit.architecture(norm.output_dim())?;
    let tc = cfg.fit.train_config(TrainConfig::single_unit(), seed)?;
    let train = apply_normalization(&split.train, &norm)?;
    let val = apply_normalization(&split.validation, &norm)?;
    let (params, history) = train_pmlp(&arch, &train, &val, &tc)?;
    eprintln!(
        "{unit}: {} epochs, best validation NLL {:.4} at epoch {}",
        history.epochs_run(),
        history.best_val_loss(),
        history.best_epoch
    );
    let meta = TrainingMetadata {
        kind: ModelKind::Pmlp,
        units: vec![unit.clone()],
        seed,
        config: tc,
        split: Some(cfg.fit.split),
        history: history.clone(),
    };
    let bundle = ModelBundle::new(&arch, &params, norm, meta)?;

    let mut run = Run::new(&g.out_dir, "train", seed, g.config_path());
    run.input(&input);
    run.stage("model.json", format!("{}\n", bundle.to_json()?).into_bytes())?;
    run.stage("history.csv", history.to_csv().into_bytes())?;
    run.stage("test.csv", csv_bytes(|b| write_dataset_csv(&split.test, b))?)?;
    run.commit(&cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub fit: FitConfig,
}

pub fn pretrain(g: &Globals, a: &PretrainArgs) -> Result<()> {
    let mut cfg: PretrainConfig = load_config(g.config_path())?;
    if !a.inputs.is_empty() {
        cfg.inputs.clone_from(&a.inputs);
    }
    cfg.fit.apply(&a.fit)?;
    let seed = g.seed_or(cfg.seed);
    cfg.seed = Some(seed);
    if cfg.inputs.is_empty() {
        return Err(config_error("missing --input (one per unit)"));
    }

    let mut units = Vec::new();
    let (mut trains, mut vals, mut tests) = (Vec::new(), Vec::new(), Vec::new());
    for path in &cfg.inputs {
        let unit = unit_for(path, None);
        let schema = schema_for(path, cfg.fit.schema.as_deref(), None)?;
        let (ds, _) = load_dataset(path, &unit, &schema)?;
        let split = split_chronological(&ds, &cfg.fit.split, seed)?;
        units.push(unit);
        trains.push(split.train);
        vals.push(split.validation);
        tests.push(split.test);
    }
    let norm = fit_normalization_pooled(&trains, cfg.fit.constant_features)?;
    let arch = cfg.fit.architecture(norm.output_dim())?;
    let tc = cfg.fit.train_config(TrainConfig::fleet_pretrain(), seed)?;
    let normalize_all = |sets: &[TurbineDataset]| -> fleetmon_core::Result<Vec<TurbineDataset>> {
        sets.iter().map(|d| apply_normalization(d, &norm)).collect()
    };
    let (ztrain, zval) = (normalize_all(&trains)?, normalize_all(&vals)?);
    let (params, history) = pretrain_farm(&arch, &ztrain, &zval, &tc)?;
    eprintln!(
        "fleet of {}: {} epochs, best validation NLL {:.4}",
        units.len(),
        history.epochs_run(),
        history.best_val_loss()
    );
    let meta = TrainingMetadata {
        kind: ModelKind::FleetPretrained,
        units: units.clone(),
        seed,
        config: tc,
        split: Some(cfg.fit.split),
        history: history.clone(),
    };
    let bundle = ModelBundle::new(&arch, &params, norm, meta)?;

    let mut run = Run::new(&g.out_dir, "pretrain", seed, g.config_path());
    for p in &cfg.inputs {
        run.input(p);
    }
    run.stage("fleet_model.json", format!("{}\n", bundle.to_json()?).into_bytes())?;
    run.stage("history.csv", history.to_csv().into_bytes())?;
    for (unit, test) in units.iter().zip(&tests) {
        run.stage(format!("{unit}.test.csv"), csv_bytes(|b| write_dataset_csv(test, b))?)?;
    }
    run.commit(&cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub bundle: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub unit: Option<String>,
    pub seed: Option<u64>,
    pub fit: FitConfig,
}

#[derive(Debug, Serialize)]
struct FinetuneSummary {
    unit: String,
    /// Validation NLL of the pre-trained parameters on this unit.
    pretrained_val_loss: f64,
    finetuned_val_loss: f64,
    best_epoch: usize,
}

fn same_layout(a: &ArchitectureSpec, b: &ArchitectureSpec) -> bool {
    a.trunk_widths == b.trunk_widths && a.mean_widths == b.mean_widths && a.stddev_widths == b.stddev_widths
}

pub fn finetune_cmd(g: &Globals, a: &FinetuneArgs) -> Result<()> {
    let mut cfg: FinetuneConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.bundle, &a.bundle);
    override_opt(&mut cfg.input, &a.input);
    override_opt(&mut cfg.unit, &a.unit);
    cfg.fit.apply(&a.fit)?;
    let seed = g.seed_or(cfg.seed);
    cfg.seed = Some(seed);
    let bundle_path = require(&cfg.bundle, "--bundle")?.clone();
    let input = require(&cfg.input, "--input")?.clone();
    let unit = unit_for(&input, cfg.unit.as_ref());
    cfg.unit = Some(unit.clone());

    let model = read_bundle(&bundle_path)?;
    if let Some(choice) = &cfg.fit.arch {
        let wanted = choice.resolve(model.arch.input_dim)?;
        if !same_layout(&wanted, &model.arch) {
            return Err(config_error(format!(
                "arch mismatch: bundle has trunk {:?} / mean {:?} / stddev {:?}, requested trunk {:?} / mean {:?} / stddev {:?}",
                model.arch.trunk_widths,
                model.arch.mean_widths,
                model.arch.stddev_widths,
                wanted.trunk_widths,
                wanted.mean_widths,
                wanted.stddev_widths
            )));
        }
    }
    let schema = schema_for(&input, cfg.fit.schema.as_deref(), Some(&model.normalization.input_names))?;
    let (ds, _) = load_dataset(&input, &unit, &schema)?;
    if ds.feature_names() != model.normalization.input_names.as_slice() {
        return Err(Error::Schema(format!("{unit} features differ from the bundle's")).into());
    }
    let split = split_chronological(&ds, &cfg.fit.split, seed)?;
    let tc = cfg.fit.train_config(TrainConfig::finetune_for(&model.arch), seed)?;
    let train = apply_normalization(&split.train, &model.normalization)?;
    let val = apply_normalization(&split.validation, &model.normalization)?;
    let (params, history) = finetune(&model.params, &model.arch, &train, &val, &tc)?;
    let summary = FinetuneSummary {
        unit: unit.clone(),
        pretrained_val_loss: history.val_loss[0],
        finetuned_val_loss: history.best_val_loss(),
        best_epoch: history.best_epoch,
    };
    eprintln!(
        "{unit}: validation NLL {:.4} -> {:.4}",
        summary.pretrained_val_loss, summary.finetuned_val_loss
    );
    let meta = TrainingMetadata {
        kind: ModelKind::FineTuned,
        units: vec![unit.clone()],
        seed,
        config: tc,
        split: Some(cfg.fit.split),
        history: history.clone(),
    };
    let bundle = ModelBundle::new(&model.arch, &params, model.normalization.clone(), meta)?;

    let mut run = Run::new(&g.out_dir, "finetune", seed, g.config_path());
    run.input(&bundle_path);
    run.input(&input);
    run.stage("model.json", format!("{}\n", bundle.to_json()?).into_bytes())?;
    run.stage("history.csv", history.to_csv().into_bytes())?;
    run.stage("test.csv", csv_bytes(|b| write_dataset_csv(&split.test, b))?)?;
    run.stage_json("finetune.json", &summary)?;
    run.commit(&cfg)?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub bundle: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub unit: Option<String>,
    pub rated_power: f64,
    pub bins: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            bundle: None,
            input: None,
            schema: None,
            unit: None,
            rated_power: 2050.0,
            bins: 20,
        }
    }
}

pub fn evaluate(g: &Globals, a: &EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.bundle, &a.bundle);
    override_opt(&mut cfg.input, &a.input);
    override_opt(&mut cfg.schema, &a.schema);
    override_opt(&mut cfg.unit, &a.unit);
    if let Some(p) = a.rated_power {
        cfg.rated_power = p;
    }
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    let bundle_path = require(&cfg.bundle, "--bundle")?.clone();
    let input = require(&cfg.input, "--input")?.clone();
    let unit = unit_for(&input, cfg.unit.as_ref());
    cfg.unit = Some(unit.clone());

    let model = read_bundle(&bundle_path)?;
    let schema = schema_for(&input, cfg.schema.as_deref(), Some(&model.normalization.input_names))?;
    let (ds, _) = load_dataset(&input, &unit, &schema)?;
    if ds.is_empty() {
        return Err(Error::Data(format!("{} holds no usable rows", input.display())).into());
    }
    let preds = model.predict_raw(&ds)?;
    let report = metrics::evaluate(&preds, ds.target(), cfg.rated_power, cfg.bins)?;
    eprintln!(
        "{unit}: n={} RMSE {:.2} kW, NRMSE {:.2}%, MCE {:.2}%",
        report.n, report.rmse, report.nrmse, report.mce
    );

    let mut run = Run::new(&g.out_dir, "evaluate", g.seed_or(None), g.config_path());
    run.input(&bundle_path);
    run.input(&input);
    run.stage("report.json", format!("{}\n", report.to_json()?).into_bytes())?;
    run.stage("report.csv", csv_bytes(|b| report.write_csv(b))?)?;
    run.commit(&cfg)?;
    Ok(())
}

// ---------------------------------------------------------------- monitor / sweep

/// Standardized residuals of every row, in row order.
fn residuals(model: &LoadedModel, ds: &TurbineDataset) -> Result<Vec<f64>> {
    let preds = model.predict_raw(ds)?;
    Ok(preds
        .iter()
        .zip(ds.target())
        .map(|(p, &y)| standardize(y, p))
        .collect::<fleetmon_core::Result<_>>()?)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorCmdConfig {
    pub bundle: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub unit: Option<String>,
    pub monitor: MonitorConfig,
    pub mode: MonitorMode,
    pub auto_acknowledge: bool,
    /// Saved monitor state to continue from. Its chart settings take precedence.
    pub resume: Option<PathBuf>,
}

pub fn monitor_cmd(g: &Globals, a: &MonitorArgs) -> Result<()> {
    let mut cfg: MonitorCmdConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.bundle, &a.bundle);
    override_opt(&mut cfg.input, &a.input);
    override_opt(&mut cfg.schema, &a.schema);
    override_opt(&mut cfg.unit, &a.unit);
    override_opt(&mut cfg.resume, &a.resume);
    if let Some(k) = a.k {
        cfg.monitor.allowance_k = k;
    }
    if let Some(i) = a.interval {
        cfg.monitor.decision_interval = i;
    }
    if let Some(l) = a.window_length {
        cfg.monitor.window_length = l;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Windowed => MonitorMode::Windowed,
            ModeArg::Continuous => MonitorMode::Continuous,
        };
    }
    cfg.auto_acknowledge |= a.auto_ack;
    let bundle_path = require(&cfg.bundle, "--bundle")?.clone();
    let input = require(&cfg.input, "--input")?.clone();
    let unit = unit_for(&input, cfg.unit.as_ref());
    cfg.unit = Some(unit.clone());

    let mut mon = match &cfg.resume {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let m: UnitMonitor = serde_json::from_str(&text).map_err(Error::from)?;
            m.config.validate()?;
            if m.unit != unit {
                return Err(config_error(format!("state {} belongs to unit {}, not {unit}", p.display(), m.unit)));
            }
            cfg.monitor = m.config;
            cfg.mode = m.mode;
            cfg.auto_acknowledge = m.auto_acknowledge;
            m
        }
        None => UnitMonitor::new(&unit, cfg.monitor, cfg.mode)?.with_auto_acknowledge(cfg.auto_acknowledge),
    };
    mon.trace.clear();

    let model = read_bundle(&bundle_path)?;
    let schema = schema_for(&input, cfg.schema.as_deref(), Some(&model.normalization.input_names))?;
    let (ds, _) = load_dataset(&input, &unit, &schema)?;
    let v = residuals(&model, &ds)?;
    let (times, v) = regrid(ds.timestamps(), &v);
    let alarms: Vec<_> = times.iter().zip(&v).filter_map(|(&t, &x)| mon.observe(t, x)).collect();
    eprintln!("{unit}: {} observations, {} alarms", times.len(), alarms.len());

    let mut run = Run::new(&g.out_dir, "monitor", g.seed_or(None), g.config_path());
    run.input(&bundle_path);
    run.input(&input);
    if let Some(p) = &cfg.resume {
        run.input(p);
    }
    run.stage("alarms.jsonl", csv_bytes(|b| write_alarms_jsonl(&alarms, b))?)?;
    run.stage("trace.csv", csv_bytes(|b| mon.write_trace_csv(b))?)?;
    let mut state = mon.clone();
    state.trace.clear();
    run.stage_json("monitor_state.json", &state)?;
    run.commit(&cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub bundle: Option<PathBuf>,
    pub windows: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub allowance_k: f64,
    pub grid: Vec<f64>,
    pub traces: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bundle: None,
            windows: None,
            schema: None,
            allowance_k: MonitorConfig::default().allowance_k,
            grid: vec![2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0],
            traces: false,
        }
    }
}

pub fn sweep(g: &Globals, a: &SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load_config(g.config_path())?;
    override_opt(&mut cfg.bundle, &a.bundle);
    override_opt(&mut cfg.windows, &a.windows);
    override_opt(&mut cfg.schema, &a.schema);
    if let Some(k) = a.k {
        cfg.allowance_k = k;
    }
    if let Some(grid) = &a.grid {
        cfg.grid.clone_from(grid);
    }
    cfg.traces |= a.traces;
    let bundle_path = require(&cfg.bundle, "--bundle")?.clone();
    let dir = require(&cfg.windows, "--windows")?.clone();

    let model = read_bundle(&bundle_path)?;
    let index_path = dir.join("index.csv");
    let index_file = std::fs::File::open(&index_path).with_context(|| format!("opening {}", index_path.display()))?;
    let index = windows::read_window_index(index_file)?;
    if index.is_empty() {
        return Err(Error::Data(format!("{} lists no windows", index_path.display())).into());
    }
    let mut labeled = Vec::with_capacity(index.len());
    for e in &index {
        let path = dir.join(&e.file);
        let schema = schema_for(&path, cfg.schema.as_deref(), Some(&model.normalization.input_names))?;
        let (ds, _) = load_dataset(&path, &e.unit_id, &schema)?;
        if ds.is_empty() {
            return Err(Error::Data(format!("window {} holds no usable rows", e.window_id)).into());
        }
        let v = residuals(&model, &ds)?;
        let (times, residuals) = regrid(ds.timestamps(), &v);
        labeled.push(LabeledWindow {
            id: e.window_id.clone(),
            label: e.label,
            onset: e.onset,
            times,
            residuals,
        });
    }
    let reports = sweep_decision_interval(&labeled, cfg.allowance_k, &cfg.grid)?;
    for r in &reports {
        eprintln!(
            "I={}: precision {} recall {}",
            r.decision_interval,
            r.precision.map_or("-".into(), |p| format!("{p:.3}")),
            r.recall.map_or("-".into(), |p| format!("{p:.3}"))
        );
    }

    let mut run = Run::new(&g.out_dir, "sweep", g.seed_or(None), g.config_path());
    run.input(&bundle_path);
    run.input(&index_path);
    run.stage("sweep.csv", csv_bytes(|b| write_sweep_csv(&reports, b))?)?;
    run.stage_json("sweep.json", &reports)?;
    if cfg.traces {
        let chart = MonitorConfig::new(cfg.allowance_k, cfg.grid[0]);
        for w in &labeled {
            let trace = run_window(&w.residuals, &chart)?;
            let name = Path::new("traces").join(format!("{}.csv", w.id));
            run.stage(name, csv_bytes(|b| trace.write_trace_csv(b, chart.decision_interval))?)?;
        }
    }
    run.commit(&cfg)?;
    Ok(())
}
