//! Synthetic fleet generator with known predictive density.
//!
//! Each unit sees a wind-speed process correlated across the fleet. Power
//! follows a shared smoothstep power curve, perturbed per unit, plus Gaussian
//! noise whose standard deviation is smallest below cut-in and above rated
//! speed and largest on the steep part of the curve. Fault windows shift the
//! mean by a multiple of the true standard deviation and end in a recorded
//! forced outage.

use chrono::{DateTime, Duration, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::events::{Event, EventCategory, EventLog};
use super::ingest::{format_timestamp, ingest_reader, FeatureColumn, FeatureKind, Schema};
use super::{RowStatus, TurbineDataset};
use crate::error::{Error, Result};
use crate::monitor::{LabeledWindow, WindowLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurveParams {
    pub cut_in_speed: f64,
    pub rated_speed: f64,
    pub rated_power_kw: f64,
}

impl Default for PowerCurveParams {
    fn default() -> Self {
        Self {
            cut_in_speed: 3.0,
            rated_speed: 12.0,
            rated_power_kw: 2050.0,
        }
    }
}

/// `σ*(v) = amplitude · rated · (floor + steep · 4u(1-u))`, with `u` the
/// position of `v` between cut-in and rated speed. `amplitude = 0` gives
/// noise-free power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub floor_fraction: f64,
    pub steep_fraction: f64,
    pub amplitude: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            floor_fraction: 0.01,
            steep_fraction: 0.05,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindParams {
    pub mean_speed: f64,
    pub speed_sd: f64,
    /// Lag-one autocorrelation of the 10-minute wind process.
    pub persistence: f64,
    /// Spread of each unit's local deviation from the farm wind.
    pub unit_speed_sd: f64,
    pub turbulence_intensity: f64,
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            mean_speed: 8.0,
            speed_sd: 3.5,
            persistence: 0.98,
            unit_speed_sd: 0.4,
            turbulence_intensity: 0.1,
        }
    }
}

/// Per-unit departures from the shared power curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVariation {
    pub rated_speed_sd: f64,
    pub power_scale_sd: f64,
}

impl Default for UnitVariation {
    fn default() -> Self {
        Self {
            rated_speed_sd: 0.25,
            power_scale_sd: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimFeatureSet {
    /// Wind speed statistics, direction and ambient temperature (7 features).
    #[default]
    Compact,
    /// The full 41-feature operational set.
    Operational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Power below the healthy curve.
    #[default]
    Derate,
    /// Power above the healthy curve.
    Overproduction,
}

/// A degradation window on one unit, ending in a forced outage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub unit: usize,
    pub start: DateTime<Utc>,
    pub duration_hours: f64,
    #[serde(default)]
    pub kind: FaultKind,
    /// Mean shift in units of σ*; falls back to [`SimConfig::fault_shift_sigmas`].
    #[serde(default)]
    pub shift_sigmas: Option<f64>,
}

impl FaultSpec {
    pub fn onset(&self) -> DateTime<Utc> {
        self.start + hours(self.duration_hours)
    }
}

fn hours(h: f64) -> Duration {
    Duration::milliseconds((h * 3_600_000.0).round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_units: usize,
    /// One entry per unit, or a single entry shared by all units.
    pub rows_per_unit: Vec<usize>,
    pub start: DateTime<Utc>,
    pub curve: PowerCurveParams,
    pub noise: NoiseParams,
    pub wind: WindParams,
    pub unit_variation: UnitVariation,
    pub features: SimFeatureSet,
    pub faults: Vec<FaultSpec>,
    pub fault_shift_sigmas: f64,
    pub outage_hours: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_units: 1,
            rows_per_unit: vec![1000],
            start: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            curve: PowerCurveParams::default(),
            noise: NoiseParams::default(),
            wind: WindParams::default(),
            unit_variation: UnitVariation::default(),
            features: SimFeatureSet::default(),
            faults: Vec::new(),
            fault_shift_sigmas: 2.0,
            outage_hours: 6.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn rows_for(&self, unit: usize) -> usize {
        if self.rows_per_unit.len() == 1 {
            self.rows_per_unit[0]
        } else {
            self.rows_per_unit[unit]
        }
    }

    pub fn unit_id(unit: usize) -> String {
        format!("T{:02}", unit + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.curve;
        if !(c.rated_power_kw > 0.0) {
            return Err(Error::Config("rated power must be positive".into()));
        }
        if !(c.cut_in_speed >= 0.0 && c.cut_in_speed < c.rated_speed) {
            return Err(Error::Config("cut-in speed must be below rated speed".into()));
        }
        if self.n_units == 0 {
            return Err(Error::Config("simulation needs at least one unit".into()));
        }
        if self.rows_per_unit.len() != 1 && self.rows_per_unit.len() != self.n_units {
            return Err(Error::Config(format!(
                "rows_per_unit has {} entries for {} units",
                self.rows_per_unit.len(),
                self.n_units
            )));
        }
        if self.rows_per_unit.contains(&0) {
            return Err(Error::Config("every unit needs at least one row".into()));
        }
        let n = &self.noise;
        if [n.floor_fraction, n.steep_fraction, n.amplitude].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        let w = &self.wind;
        if !(0.0..1.0).contains(&w.persistence) || !(w.speed_sd >= 0.0) || !(w.unit_speed_sd >= 0.0) {
            return Err(Error::Config("wind persistence must lie in [0, 1) and spreads be non-negative".into()));
        }
        if !(self.outage_hours >= 0.0) {
            return Err(Error::Config("outage duration must be non-negative".into()));
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.unit >= self.n_units {
                return Err(Error::Config(format!("fault {i} targets unit {} of {}", f.unit, self.n_units)));
            }
            if !(f.duration_hours > 0.0) {
                return Err(Error::Config(format!("fault {i} ends before it starts (duration {} h)", f.duration_hours)));
            }
            if !f.shift_sigmas.unwrap_or(self.fault_shift_sigmas).is_finite() {
                return Err(Error::Config(format!("fault {i} has a non-finite shift")));
            }
        }
        Ok(())
    }

    /// Schema matching the CSVs this configuration produces.
    pub fn schema(&self) -> Schema {
        let mut schema = match self.features {
            SimFeatureSet::Compact => Schema {
                version: 1,
                timestamp_column: String::new(),
                power_column: String::new(),
                status_column: None,
                features: COMPACT_FEATURES
                    .iter()
                    .map(|&(name, kind)| FeatureColumn {
                        name: name.into(),
                        column: name.into(),
                        kind,
                    })
                    .collect(),
            },
            SimFeatureSet::Operational => Schema::operational(),
        };
        schema.timestamp_column = "timestamp".into();
        schema.power_column = "power_kw".into();
        schema.status_column = Some("status".into());
        schema
    }
}

const COMPACT_FEATURES: [(&str, FeatureKind); 6] = [
    ("Avg. wind speed", FeatureKind::Linear),
    ("Stdev. wind speed", FeatureKind::Linear),
    ("Min. wind speed", FeatureKind::Linear),
    ("Max. wind speed", FeatureKind::Linear),
    ("avg. wind speed dir.", FeatureKind::AngleDegrees),
    ("Avg. nacelle ambient temp.", FeatureKind::Linear),
];

/// Healthy power curve and noise level of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCurve {
    pub cut_in_speed: f64,
    pub rated_speed: f64,
    pub rated_power_kw: f64,
    pub noise: NoiseParams,
}

impl UnitCurve {
    fn position(&self, speed: f64) -> f64 {
        ((speed - self.cut_in_speed) / (self.rated_speed - self.cut_in_speed)).clamp(0.0, 1.0)
    }

    /// Expected power `μ*` at a wind speed.
    pub fn mean_power(&self, speed: f64) -> f64 {
        let u = self.position(speed);
        self.rated_power_kw * u * u * (3.0 - 2.0 * u)
    }

    /// Noise standard deviation `σ*` at a wind speed.
    pub fn noise_sd(&self, speed: f64) -> f64 {
        let u = self.position(speed);
        let n = &self.noise;
        n.amplitude * self.rated_power_kw * (n.floor_fraction + n.steep_fraction * 4.0 * u * (1.0 - u))
    }
}

/// True density of one generated row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub wind_speed: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Raw SCADA-style table of one unit, in the simulator's schema.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub timestamps: Vec<DateTime<Utc>>,
    pub values: Vec<Vec<f64>>,
    pub status: Vec<RowStatus>,
}

impl RawTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for ((t, vals), st) in self.timestamps.iter().zip(&self.values).zip(&self.status) {
            let mut rec = Vec::with_capacity(self.header.len());
            rec.push(format_timestamp(t));
            rec.extend(vals.iter().map(|v| format!("{v:?}")));
            rec.push(st.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<simulated csv>", e))?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedFleet {
    pub schema: Schema,
    pub raw: Vec<RawTable>,
    pub datasets: Vec<TurbineDataset>,
    pub events: EventLog,
    pub truth: Vec<Vec<TruthRow>>,
    pub curves: Vec<UnitCurve>,
}

impl SimulatedFleet {
    /// `unit_id,timestamp,wind_speed,mu_star,sigma_star` for every row.
    pub fn write_truth_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_id", "timestamp", "wind_speed", "mu_star", "sigma_star"])?;
        for (ds, truth) in self.datasets.iter().zip(&self.truth) {
            for (t, tr) in ds.timestamps().iter().zip(truth) {
                w.write_record([
                    ds.unit_id().to_string(),
                    format_timestamp(t),
                    format!("{:?}", tr.wind_speed),
                    format!("{:?}", tr.mu),
                    format!("{:?}", tr.sigma),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<truth csv>", e))?;
        Ok(())
    }
}

struct Ar1 {
    phi: f64,
    innovation: f64,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            phi,
            innovation: (1.0 - phi * phi).sqrt(),
            state: rng.sample(StandardNormal),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.state = self.phi * self.state + self.innovation * e;
        self.state
    }
}

pub fn simulate_fleet(config: &SimConfig) -> Result<SimulatedFleet> {
    config.validate()?;
    let cadence = super::default_cadence();
    let schema = config.schema();
    let max_rows = (0..config.n_units).map(|u| config.rows_for(u)).max().unwrap_or(0);

    // Shared farm wind and direction.
    let mut farm_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut farm_ar = Ar1::new(config.wind.persistence, &mut farm_rng);
    let mut farm_speed = Vec::with_capacity(max_rows);
    let mut farm_dir = Vec::with_capacity(max_rows);
    let mut dir: f64 = farm_rng.random_range(0.0..360.0);
    // Weather-scale temperature swings lasting about a week.
    let mut farm_temp_ar = Ar1::new(0.999, &mut farm_rng);
    let mut farm_temp = Vec::with_capacity(max_rows);
    for _ in 0..max_rows {
        farm_temp.push(3.0 * farm_temp_ar.next(&mut farm_rng));
        farm_speed.push(config.wind.mean_speed + config.wind.speed_sd * farm_ar.next(&mut farm_rng));
        let step: f64 = farm_rng.sample(StandardNormal);
        dir = (dir + 3.0 * step).rem_euclid(360.0);
        farm_dir.push(dir);
    }

    let mut raw = Vec::with_capacity(config.n_units);
    let mut truth = Vec::with_capacity(config.n_units);
    let mut curves = Vec::with_capacity(config.n_units);
    let mut events = Vec::new();
    let header = raw_header(&schema);

    for unit in 0..config.n_units {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(unit as u64 + 1);
        let curve = unit_curve(config, &mut rng);
        let unit_id = SimConfig::unit_id(unit);
        let n = config.rows_for(unit);
        let faults: Vec<&FaultSpec> = config.faults.iter().filter(|f| f.unit == unit).collect();
        for f in &faults {
            let onset = f.onset();
            events.push(Event::new(&unit_id, onset, onset + hours(config.outage_hours), EventCategory::ForcedOutage)?);
        }

        let mut local = Ar1::new(config.wind.persistence, &mut rng);
        let mut table = RawTable {
            header: header.clone(),
            timestamps: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            status: Vec::with_capacity(n),
        };
        let mut unit_truth = Vec::with_capacity(n);
        for i in 0..n {
            let t = config.start + cadence * i as i32;
            let speed = (farm_speed[i] + config.wind.unit_speed_sd * local.next(&mut rng)).max(0.0);
            let mu = curve.mean_power(speed);
            let sigma = curve.noise_sd(speed);
            let eps: f64 = rng.sample(StandardNormal);

            let mut status = RowStatus::Normal;
            let mut power = mu + sigma * eps;
            for f in &faults {
                let onset = f.onset();
                if t >= f.start && t < onset {
                    let shift = f.shift_sigmas.unwrap_or(config.fault_shift_sigmas) * sigma;
                    power += match f.kind {
                        FaultKind::Derate => -shift,
                        FaultKind::Overproduction => shift,
                    };
                    status = RowStatus::PreOutageWindow;
                } else if t >= onset && t <= onset + hours(config.outage_hours) {
                    power = 0.0;
                    status = RowStatus::ForcedOutage;
                }
            }

            let ctx = RowContext {
                time: t,
                speed,
                direction: farm_dir[i],
                temperature_anomaly: farm_temp[i],
                load: mu / curve.rated_power_kw,
                rated_speed: curve.rated_speed,
            };
            let mut vals = Vec::with_capacity(header.len());
            for f in &schema.features {
                vals.push(feature_value(&f.name, &ctx, &mut rng));
            }
            vals.push(power);
            table.timestamps.push(t);
            table.values.push(vals);
            table.status.push(status);
            unit_truth.push(TruthRow {
                wind_speed: speed,
                mu,
                sigma,
            });
        }

        raw.push(table);
        truth.push(unit_truth);
        curves.push(curve);
    }

    // Datasets come from the same bytes a file would hold.
    let datasets = raw
        .iter()
        .enumerate()
        .map(|(u, table)| {
            let bytes = table.to_csv_bytes()?;
            let (ds, report) = ingest_reader(bytes.as_slice(), &SimConfig::unit_id(u), &schema, cadence)?;
            debug_assert_eq!(report.rows_kept, table.timestamps.len());
            Ok(ds)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulatedFleet {
        schema,
        raw,
        datasets,
        events: EventLog::new(events),
        truth,
        curves,
    })
}

fn raw_header(schema: &Schema) -> Vec<String> {
    let mut h = vec![schema.timestamp_column.clone()];
    h.extend(schema.features.iter().map(|f| f.column.clone()));
    h.push(schema.power_column.clone());
    h.push(schema.status_column.clone().unwrap_or_else(|| "status".into()));
    h
}

fn unit_curve(config: &SimConfig, rng: &mut ChaCha8Rng) -> UnitCurve {
    let c = &config.curve;
    let v = &config.unit_variation;
    let dv: f64 = rng.sample(StandardNormal);
    let ds: f64 = rng.sample(StandardNormal);
    let rated_speed = (c.rated_speed + v.rated_speed_sd * dv).max(c.cut_in_speed + 1.0);
    UnitCurve {
        cut_in_speed: c.cut_in_speed,
        rated_speed,
        rated_power_kw: c.rated_power_kw * (1.0 + v.power_scale_sd * ds).clamp(0.9, 1.1),
        noise: config.noise.clone(),
    }
}

struct RowContext {
    time: DateTime<Utc>,
    speed: f64,
    direction: f64,
    temperature_anomaly: f64,
    /// Fraction of rated power on the healthy curve.
    load: f64,
    rated_speed: f64,
}

impl RowContext {
    fn ambient(&self) -> f64 {
        let hour = self.time.hour() as f64 + self.time.minute() as f64 / 60.0;
        10.0 + self.temperature_anomaly + 3.0 * (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin()
    }
}

fn feature_value(name: &str, ctx: &RowContext, rng: &mut ChaCha8Rng) -> f64 {
    let mut n = || -> f64 { rng.sample(StandardNormal) };
    let wind_sd = 0.1 * ctx.speed.max(0.5);
    match name {
        "Avg. wind speed" => ctx.speed,
        "Stdev. wind speed" => (wind_sd * (1.0 + 0.2 * n())).max(0.0),
        "Min. wind speed" => (ctx.speed - 2.2 * wind_sd * (1.0 + 0.1 * n())).max(0.0),
        "Max. wind speed" => ctx.speed + 2.2 * wind_sd * (1.0 + 0.1 * n()),
        "avg. wind speed dir." => (ctx.direction + 2.0 * n()).rem_euclid(360.0),
        "max. wind speed dir." => (ctx.direction + 15.0 + 3.0 * n()).rem_euclid(360.0),
        "min. wind speed dir." => (ctx.direction - 15.0 + 3.0 * n()).rem_euclid(360.0),
        "Stdev. wind speed dir." => (6.0 + n()).max(0.0),
        "Avg. nacelle ambient temp." | "Avg. conv. ambient temp." => ctx.ambient() + 0.5 * n(),
        _ if name.contains("pitch") => {
            (2.0 * (ctx.speed - ctx.rated_speed).max(0.0)).min(25.0) + 0.3 * n()
        }
        _ if name.contains("acceleration") => 0.02 + 0.01 * ctx.speed + 0.005 * n(),
        _ if name.contains("press") => 1.5 + 1.0 * ctx.load + 0.05 * n(),
        _ if name.starts_with("Stdev.") => (0.3 + 0.5 * ctx.load + 0.05 * n()).max(0.0),
        _ if name.starts_with("Min.") => ctx.ambient() + 15.0 + 20.0 * ctx.load - 1.0 + 0.5 * n(),
        _ if name.starts_with("Max.") => ctx.ambient() + 15.0 + 20.0 * ctx.load + 1.0 + 0.5 * n(),
        // Remaining temperatures heat with load.
        _ => ctx.ambient() + 15.0 + 20.0 * ctx.load + 0.7 * n(),
    }
}

/// Labeled standardized-residual windows: healthy windows are i.i.d. N(0, 1);
/// faulty windows carry a mean shift that starts somewhere in the window and
/// persists to its end, where the fault is recorded.
pub fn simulate_residual_windows(
    n_faulty: usize,
    n_healthy: usize,
    length: usize,
    shift_range: (f64, f64),
    seed: u64,
) -> Vec<LabeledWindow> {
    let cadence = super::default_cadence();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::with_capacity(n_faulty + n_healthy);
    for w in 0..n_faulty + n_healthy {
        let start = origin + Duration::days(7 * w as i64);
        let times: Vec<DateTime<Utc>> = (0..length).map(|i| start + cadence * i as i32).collect();
        let mut v: Vec<f64> = (0..length).map(|_| rng.sample(StandardNormal)).collect();
        let faulty = w < n_faulty;
        if faulty {
            let begin = rng.random_range(length / 3..length);
            let mag = rng.random_range(shift_range.0..=shift_range.1);
            let sign = if rng.random_bool(0.8) { -1.0 } else { 1.0 };
            v[begin..].iter_mut().for_each(|x| *x += sign * mag);
        }
        out.push(LabeledWindow {
            id: format!("w{w:03}"),
            label: if faulty { WindowLabel::Faulty } else { WindowLabel::Healthy },
            onset: faulty.then(|| start + cadence * length as i32),
            times,
            residuals: v,
        });
    }
    out
}
