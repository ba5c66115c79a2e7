//! Operational events and the filtering they drive.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::ingest::{format_timestamp, parse_timestamp};
use super::TurbineDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    Standby,
    Warning,
    Stop,
    ForcedOutage,
}

impl EventCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            EventCategory::Standby => "standby",
            EventCategory::Warning => "warning",
            EventCategory::Stop => "stop",
            EventCategory::ForcedOutage => "forced_outage",
        }
    }
}

impl FromStr for EventCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "standby" => EventCategory::Standby,
            "warning" => EventCategory::Warning,
            "stop" => EventCategory::Stop,
            "forced_outage" => EventCategory::ForcedOutage,
            other => return Err(Error::Data(format!("unknown event category {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub unit_id: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub category: EventCategory,
}

impl Event {
    pub fn new(unit_id: impl Into<String>, start: DateTime<Utc>, end: DateTime<Utc>, category: EventCategory) -> Result<Self> {
        if end < start {
            return Err(Error::Data(format!("event ends ({end}) before it starts ({start})")));
        }
        Ok(Self {
            unit_id: unit_id.into(),
            start,
            end,
            category,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(events: Vec<Event>) -> Self {
        Self { events }
    }

    pub fn for_unit<'a>(&'a self, unit_id: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.unit_id == unit_id)
    }

    /// Reads `unit_id,start,end,category` rows.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut events = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let time = |k: usize| {
                parse_timestamp(field(k)).ok_or_else(|| Error::Data(format!("events line {line}: bad time {:?}", field(k))))
            };
            let category = field(3)
                .parse()
                .map_err(|e: Error| Error::Data(format!("events line {line}: {e}")))?;
            events.push(Event::new(field(0), time(1)?, time(2)?, category)?);
        }
        Ok(Self { events })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_id", "start", "end", "category"])?;
        for e in &self.events {
            w.write_record([
                e.unit_id.as_str(),
                &format_timestamp(&e.start),
                &format_timestamp(&e.end),
                e.category.as_str(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<events output>", e))?;
        Ok(())
    }
}

/// Rows removed by [`filter_events`], by reason. Each row is counted once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub removed_standby: usize,
    pub removed_warning: usize,
    pub removed_stop: usize,
    pub removed_forced_outage: usize,
    pub removed_pre_outage: usize,
    pub remaining: usize,
    pub empty: bool,
}

impl FilterReport {
    pub fn removed(&self) -> usize {
        self.removed_standby + self.removed_warning + self.removed_stop + self.removed_forced_outage + self.removed_pre_outage
    }
}

#[derive(Clone, Copy)]
enum Reason {
    Event(EventCategory),
    PreOutage,
}

/// Removes rows whose interval `[t, t + cadence)` overlaps a standby, warning,
/// stop or forced-outage event, and rows stamped within `pre_outage_days`
/// before the start of a forced outage.
pub fn filter_events(
    dataset: &TurbineDataset,
    events: &EventLog,
    pre_outage_days: f64,
    cadence: Duration,
) -> Result<(TurbineDataset, FilterReport)> {
    if !(pre_outage_days >= 0.0 && pre_outage_days.is_finite()) {
        return Err(Error::Config(format!("pre-outage window must be non-negative, got {pre_outage_days}")));
    }
    let window = Duration::milliseconds((pre_outage_days * 86_400_000.0).round() as i64);
    let unit_events: Vec<&Event> = events.for_unit(dataset.unit_id()).collect();

    let reason_for = |t: DateTime<Utc>| -> Option<Reason> {
        for e in &unit_events {
            if t <= e.end && t + cadence > e.start {
                return Some(Reason::Event(e.category));
            }
        }
        unit_events
            .iter()
            .filter(|e| e.category == EventCategory::ForcedOutage)
            .any(|e| t >= e.start - window && t < e.start)
            .then_some(Reason::PreOutage)
    };

    let mut report = FilterReport::default();
    let mut keep = Vec::with_capacity(dataset.len());
    for (i, &t) in dataset.timestamps().iter().enumerate() {
        match reason_for(t) {
            None => keep.push(i),
            Some(Reason::Event(EventCategory::Standby)) => report.removed_standby += 1,
            Some(Reason::Event(EventCategory::Warning)) => report.removed_warning += 1,
            Some(Reason::Event(EventCategory::Stop)) => report.removed_stop += 1,
            Some(Reason::Event(EventCategory::ForcedOutage)) => report.removed_forced_outage += 1,
            Some(Reason::PreOutage) => report.removed_pre_outage += 1,
        }
    }
    report.remaining = keep.len();
    report.empty = keep.is_empty();
    Ok((dataset.select(&keep), report))
}
