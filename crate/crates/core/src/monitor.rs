//! Two-sided tabular CUSUM over standardized residuals, windowed evaluation
//! against labeled fault windows, and a streaming per-unit monitor.

use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::ingest::format_timestamp;
use crate::error::{Error, Result};
use crate::model::GaussianPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub allowance_k: f64,
    pub decision_interval: f64,
    /// Steps per evaluation window (72 h at 10-minute cadence).
    pub window_length: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            allowance_k: 0.5,
            decision_interval: 5.0,
            window_length: 432,
        }
    }
}

impl MonitorConfig {
    pub fn new(allowance_k: f64, decision_interval: f64) -> Self {
        Self {
            allowance_k,
            decision_interval,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.allowance_k > 0.0 && self.allowance_k.is_finite()) {
            return Err(Error::Config(format!("allowance k must be positive, got {}", self.allowance_k)));
        }
        if !(self.decision_interval > 0.0) {
            return Err(Error::Config(format!("decision interval must be positive, got {}", self.decision_interval)));
        }
        if self.window_length == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    pub s_high: f64,
    pub s_low: f64,
    pub a_high: f64,
    pub a_low: f64,
    /// Number of observations folded in so far.
    pub t: usize,
    /// Step (1-based) at which the statistic first exceeded the decision interval.
    pub alarmed_at: Option<usize>,
    pub alarm_side: Option<Side>,
    /// Missing observations skipped.
    pub gaps: usize,
}

impl CusumState {
    /// Running maximum of both sides.
    pub fn statistic(&self) -> f64 {
        self.a_high.max(self.a_low)
    }
}

/// `(y - mean) / stddev`.
pub fn standardize(y: f64, pred: &GaussianPrediction) -> Result<f64> {
    if !(pred.stddev > 0.0) {
        return Err(Error::Domain(format!("standard deviation must be positive, got {}", pred.stddev)));
    }
    Ok((y - pred.mean) / pred.stddev)
}

/// One CUSUM update. A non-finite `v` counts as a gap and leaves the sums unchanged.
pub fn cusum_step(state: CusumState, v: f64, config: &MonitorConfig) -> CusumState {
    let mut s = state;
    s.t += 1;
    if !v.is_finite() {
        s.gaps += 1;
        return s;
    }
    let k = config.allowance_k;
    s.s_high = (v - k + s.s_high).max(0.0);
    s.s_low = (-k - v + s.s_low).max(0.0);
    s.a_high = s.a_high.max(s.s_high);
    s.a_low = s.a_low.max(s.s_low);
    if s.alarmed_at.is_none() && s.s_high.max(s.s_low) > config.decision_interval {
        s.alarmed_at = Some(s.t);
        s.alarm_side = Some(if s.s_high >= s.s_low { Side::High } else { Side::Low });
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub s_high: f64,
    pub s_low: f64,
    /// `max(A_high, A_low)` up to this step.
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRun {
    /// Index into the series of the first alarm.
    pub alarm_index: Option<usize>,
    pub alarm_side: Option<Side>,
    pub trace: Vec<TracePoint>,
    pub final_state: CusumState,
}

impl WindowRun {
    pub fn alarmed(&self) -> bool {
        self.alarm_index.is_some()
    }

    /// First index where the running maximum exceeds `threshold`.
    pub fn first_exceedance(&self, threshold: f64) -> Option<usize> {
        self.trace.iter().position(|p| p.a > threshold)
    }

    /// `t, s_high, -s_low, I, -I` rows for charting.
    pub fn write_trace_csv<W: Write>(&self, out: W, decision_interval: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "s_high", "neg_s_low", "upper", "lower"])?;
        for (i, p) in self.trace.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.s_high.to_string(),
                (-p.s_low).to_string(),
                decision_interval.to_string(),
                (-decision_interval).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

pub fn run_window(v: &[f64], config: &MonitorConfig) -> Result<WindowRun> {
    if v.is_empty() {
        return Err(Error::Data("empty residual window".into()));
    }
    let mut state = CusumState::default();
    let mut trace = Vec::with_capacity(v.len());
    for &x in v {
        state = cusum_step(state, x, config);
        trace.push(TracePoint {
            s_high: state.s_high,
            s_low: state.s_low,
            a: state.statistic(),
        });
    }
    Ok(WindowRun {
        alarm_index: state.alarmed_at.map(|t| t - 1),
        alarm_side: state.alarm_side,
        trace,
        final_state: state,
    })
}

/// Steps until the first alarm (1-based), or `None` if `max_steps` pass quietly.
pub fn run_length(v: impl IntoIterator<Item = f64>, config: &MonitorConfig, max_steps: usize) -> Option<usize> {
    let mut state = CusumState::default();
    for x in v.into_iter().take(max_steps) {
        state = cusum_step(state, x, config);
        if state.alarmed_at.is_some() {
            return state.alarmed_at;
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Healthy,
    Faulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub id: String,
    pub label: WindowLabel,
    /// Recorded fault onset; required for faulty windows.
    pub onset: Option<DateTime<Utc>>,
    pub times: Vec<DateTime<Utc>>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowVerdict {
    pub id: String,
    pub label: WindowLabel,
    pub alarm: bool,
    pub alarm_index: Option<usize>,
    pub alarm_time: Option<DateTime<Utc>>,
    pub notice_time_hours: Option<f64>,
    /// The alarm came after the onset and the notice time was raised to 0.
    pub notice_floored: bool,
    pub gaps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoticeStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl NoticeStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let q = |p: f64| {
            let h = p * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            count: n,
            mean,
            std,
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub allowance_k: f64,
    pub decision_interval: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// `None` when no window alarmed.
    pub precision: Option<f64>,
    /// `None` when there are no faulty windows.
    pub recall: Option<f64>,
    pub notice: Option<NoticeStats>,
    pub verdicts: Vec<WindowVerdict>,
}

fn check_window(w: &LabeledWindow) -> Result<()> {
    if w.residuals.is_empty() {
        return Err(Error::Data(format!("window {} is empty", w.id)));
    }
    if w.times.len() != w.residuals.len() {
        return Err(Error::Shape(format!(
            "window {}: {} timestamps for {} residuals",
            w.id,
            w.times.len(),
            w.residuals.len()
        )));
    }
    if w.label == WindowLabel::Faulty && w.onset.is_none() {
        return Err(Error::Data(format!("faulty window {} has no fault onset", w.id)));
    }
    Ok(())
}

fn verdict(w: &LabeledWindow, alarm_index: Option<usize>, gaps: usize) -> WindowVerdict {
    let alarm_time = alarm_index.map(|i| w.times[i]);
    let (notice, floored) = match (w.label, alarm_time, w.onset) {
        (WindowLabel::Faulty, Some(at), Some(onset)) => {
            let h = (onset - at).num_milliseconds() as f64 / 3_600_000.0;
            (Some(h.max(0.0)), h < 0.0)
        }
        _ => (None, false),
    };
    WindowVerdict {
        id: w.id.clone(),
        label: w.label,
        alarm: alarm_index.is_some(),
        alarm_index,
        alarm_time,
        notice_time_hours: notice,
        notice_floored: floored,
        gaps,
    }
}

fn summarize(allowance_k: f64, decision_interval: f64, verdicts: Vec<WindowVerdict>) -> ClassificationReport {
    let count = |label, alarm| verdicts.iter().filter(|v| v.label == label && v.alarm == alarm).count();
    let tp = count(WindowLabel::Faulty, true);
    let fp = count(WindowLabel::Healthy, true);
    let fn_ = count(WindowLabel::Faulty, false);
    let tn = count(WindowLabel::Healthy, false);
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let notices: Vec<f64> = verdicts.iter().filter_map(|v| v.notice_time_hours).collect();
    ClassificationReport {
        allowance_k,
        decision_interval,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        notice: NoticeStats::from_values(&notices),
        verdicts,
    }
}

pub fn classify_windows(windows: &[LabeledWindow], config: &MonitorConfig) -> Result<ClassificationReport> {
    config.validate()?;
    let mut verdicts = Vec::with_capacity(windows.len());
    for w in windows {
        check_window(w)?;
        let run = run_window(&w.residuals, config)?;
        verdicts.push(verdict(w, run.alarm_index, run.final_state.gaps));
    }
    Ok(summarize(config.allowance_k, config.decision_interval, verdicts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub decision_interval: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub notice: Option<NoticeStats>,
}

impl From<&ClassificationReport> for SweepRow {
    fn from(r: &ClassificationReport) -> Self {
        Self {
            decision_interval: r.decision_interval,
            precision: r.precision,
            recall: r.recall,
            true_positives: r.true_positives,
            false_positives: r.false_positives,
            false_negatives: r.false_negatives,
            notice: r.notice,
        }
    }
}

/// Classifies the same windows at every decision interval in `grid`.
/// Each window's trace is computed once; alarms at a given `I` are the
/// first steps where the running maximum exceeds it.
pub fn sweep_decision_interval(windows: &[LabeledWindow], allowance_k: f64, grid: &[f64]) -> Result<Vec<ClassificationReport>> {
    if grid.is_empty() {
        return Err(Error::Config("decision-interval grid is empty".into()));
    }
    if grid.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::Config("decision-interval grid must be strictly ascending".into()));
    }
    for &i in grid {
        MonitorConfig::new(allowance_k, i).validate()?;
    }
    // The trace does not depend on I; any positive value will do here.
    let base = MonitorConfig::new(allowance_k, f64::INFINITY);
    let runs = windows
        .iter()
        .map(|w| {
            check_window(w)?;
            run_window(&w.residuals, &base)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(grid
        .iter()
        .map(|&i| {
            let verdicts = windows
                .iter()
                .zip(&runs)
                .map(|(w, run)| verdict(w, run.first_exceedance(i), run.final_state.gaps))
                .collect();
            summarize(allowance_k, i, verdicts)
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(reports: &[ClassificationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "decision_interval",
        "precision",
        "recall",
        "tp",
        "fp",
        "fn",
        "notice_mean_h",
        "notice_std_h",
        "notice_q1_h",
        "notice_median_h",
        "notice_q3_h",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        let n = r.notice;
        w.write_record([
            r.decision_interval.to_string(),
            opt(r.precision),
            opt(r.recall),
            r.true_positives.to_string(),
            r.false_positives.to_string(),
            r.false_negatives.to_string(),
            opt(n.map(|n| n.mean)),
            opt(n.map(|n| n.std)),
            opt(n.map(|n| n.q1)),
            opt(n.map(|n| n.median)),
            opt(n.map(|n| n.q3)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMode {
    /// Statistics restart every `window_length` observations.
    Windowed,
    /// Statistics run until an alarm is acknowledged.
    #[default]
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub unit: String,
    pub timestamp: DateTime<Utc>,
    pub side: Side,
    pub statistic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamTracePoint {
    pub timestamp: DateTime<Utc>,
    pub s_high: f64,
    pub s_low: f64,
}

/// Streaming CUSUM for one unit. Serializable for checkpointing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMonitor {
    pub unit: String,
    pub config: MonitorConfig,
    pub mode: MonitorMode,
    /// Re-arm immediately after each alarm instead of waiting for [`UnitMonitor::acknowledge`].
    pub auto_acknowledge: bool,
    pub state: CusumState,
    pub trace: Vec<StreamTracePoint>,
}

impl UnitMonitor {
    pub fn new(unit: impl Into<String>, config: MonitorConfig, mode: MonitorMode) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            unit: unit.into(),
            config,
            mode,
            auto_acknowledge: false,
            state: CusumState::default(),
            trace: Vec::new(),
        })
    }

    pub fn with_auto_acknowledge(mut self, on: bool) -> Self {
        self.auto_acknowledge = on;
        self
    }

    /// Whether an alarm is raised and not yet acknowledged.
    pub fn alarmed(&self) -> bool {
        self.state.alarmed_at.is_some()
    }

    pub fn acknowledge(&mut self) {
        self.state = CusumState::default();
    }

    /// Folds one standardized residual in; returns an event when an alarm fires.
    pub fn observe(&mut self, timestamp: DateTime<Utc>, v: f64) -> Option<AlarmEvent> {
        if self.mode == MonitorMode::Windowed && self.state.t == self.config.window_length {
            self.state = CusumState::default();
        }
        let was_alarmed = self.alarmed();
        self.state = cusum_step(self.state, v, &self.config);
        self.trace.push(StreamTracePoint {
            timestamp,
            s_high: self.state.s_high,
            s_low: self.state.s_low,
        });
        if was_alarmed || !self.alarmed() {
            return None;
        }
        let side = self.state.alarm_side.unwrap_or(Side::High);
        let event = AlarmEvent {
            unit: self.unit.clone(),
            timestamp,
            side,
            statistic: match side {
                Side::High => self.state.s_high,
                Side::Low => self.state.s_low,
            },
        };
        if self.auto_acknowledge {
            let t = self.state.t;
            self.acknowledge();
            self.state.t = t;
        }
        Some(event)
    }

    /// `timestamp, s_high, -s_low, I, -I` rows for charting.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "s_high", "neg_s_low", "upper", "lower"])?;
        let i = self.config.decision_interval;
        for p in &self.trace {
            w.write_record([
                format_timestamp(&p.timestamp),
                p.s_high.to_string(),
                (-p.s_low).to_string(),
                i.to_string(),
                (-i).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

pub fn write_alarms_jsonl<W: Write>(alarms: &[AlarmEvent], mut out: W) -> Result<()> {
    for a in alarms {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n").map_err(|e| Error::io("<alarms>", e))?;
    }
    Ok(())
}
