//! Fixed-length labeled windows cut from unit histories.

use std::io::{Read, Write};

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{EventCategory, EventLog};
use super::ingest::{format_timestamp, parse_timestamp};
use super::{RowStatus, TurbineDataset};
use crate::error::{Error, Result};
use crate::monitor::WindowLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub id: String,
    pub unit_id: String,
    pub start: DateTime<Utc>,
    /// Exclusive.
    pub end: DateTime<Utc>,
    pub label: WindowLabel,
    pub onset: Option<DateTime<Utc>>,
}

/// One faulty window of `length` steps ending at each forced-outage start.
pub fn fault_windows(unit_id: &str, events: &EventLog, length: usize, cadence: Duration) -> Vec<WindowSpec> {
    events
        .for_unit(unit_id)
        .filter(|e| e.category == EventCategory::ForcedOutage)
        .enumerate()
        .map(|(i, e)| WindowSpec {
            id: format!("{unit_id}-fault-{i:02}"),
            unit_id: unit_id.to_string(),
            start: e.start - cadence * length as i32,
            end: e.start,
            label: WindowLabel::Faulty,
            onset: Some(e.start),
        })
        .collect()
}

/// Up to `count` non-overlapping healthy windows: contiguous runs of normal
/// rows at least `clearance` away from every event of the unit.
pub fn healthy_windows(
    ds: &TurbineDataset,
    events: &EventLog,
    length: usize,
    count: usize,
    clearance: Duration,
    cadence: Duration,
    seed: u64,
) -> Vec<WindowSpec> {
    if length == 0 || ds.len() < length {
        return Vec::new();
    }
    let t = ds.timestamps();
    let span = cadence * (length as i32 - 1);
    let busy: Vec<(DateTime<Utc>, DateTime<Utc>)> = events
        .for_unit(ds.unit_id())
        .map(|e| (e.start - clearance, e.end + clearance))
        .collect();
    // Prefix count of abnormal rows for O(1) range checks.
    let mut bad = vec![0usize; ds.len() + 1];
    for (i, s) in ds.status().iter().enumerate() {
        bad[i + 1] = bad[i] + usize::from(*s != RowStatus::Normal);
    }
    let mut candidates: Vec<usize> = (0..=ds.len() - length)
        .filter(|&i| {
            let (a, b) = (t[i], t[i + length - 1]);
            b - a == span && bad[i + length] == bad[i] && busy.iter().all(|&(lo, hi)| b < lo || a > hi)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut taken: Vec<usize> = Vec::new();
    for c in candidates {
        if taken.len() == count {
            break;
        }
        if taken.iter().all(|&s| c + length <= s || s + length <= c) {
            taken.push(c);
        }
    }
    taken.sort_unstable();
    taken
        .into_iter()
        .enumerate()
        .map(|(k, i)| WindowSpec {
            id: format!("{}-healthy-{k:02}", ds.unit_id()),
            unit_id: ds.unit_id().to_string(),
            start: t[i],
            end: t[i + length - 1] + cadence,
            label: WindowLabel::Healthy,
            onset: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowIndexEntry {
    pub window_id: String,
    pub unit_id: String,
    pub file: String,
    pub label: WindowLabel,
    pub onset: Option<DateTime<Utc>>,
}

pub fn write_window_index<W: Write>(entries: &[WindowIndexEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_id", "unit_id", "file", "label", "onset"])?;
    for e in entries {
        let label = match e.label {
            WindowLabel::Healthy => "healthy",
            WindowLabel::Faulty => "faulty",
        };
        let onset = e.onset.as_ref().map(format_timestamp).unwrap_or_default();
        w.write_record([e.window_id.as_str(), &e.unit_id, &e.file, label, &onset])?;
    }
    w.flush().map_err(|e| Error::io("<window index>", e))?;
    Ok(())
}

pub fn read_window_index<R: Read>(reader: R) -> Result<Vec<WindowIndexEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |k: usize| rec.get(k).unwrap_or("").to_string();
        let label = match f(3).to_ascii_lowercase().as_str() {
            "healthy" => WindowLabel::Healthy,
            "faulty" => WindowLabel::Faulty,
            other => return Err(Error::Data(format!("window index line {line}: unknown label {other:?}"))),
        };
        let onset = match f(4).as_str() {
            "" => None,
            s => Some(parse_timestamp(s).ok_or_else(|| Error::Data(format!("window index line {line}: bad onset {s:?}")))?),
        };
        out.push(WindowIndexEntry {
            window_id: f(0),
            unit_id: f(1),
            file: f(2),
            label,
            onset,
        });
    }
    Ok(out)
}

/// Copies the header and the rows with `start <= time < end` from a CSV.
/// Returns the number of rows written.
pub fn slice_csv_by_time<R: Read, W: Write>(
    reader: R,
    out: W,
    timestamp_column: &str,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Result<usize> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == timestamp_column)
        .ok_or_else(|| Error::Schema(format!("no column {timestamp_column:?}")))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&headers)?;
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if let Some(t) = rec.get(col).and_then(parse_timestamp) {
            if t >= start && t < end {
                w.write_record(&rec)?;
                n += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<window csv>", e))?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::Event;
    use chrono::TimeZone;

    fn ds(n: usize) -> TurbineDataset {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        TurbineDataset::new(
            "T1",
            vec!["x".into()],
            (0..n as i64).map(|i| t0 + Duration::minutes(10 * i)).collect(),
            vec![0.0; n],
            vec![0.0; n],
            vec![RowStatus::Normal; n],
        )
        .unwrap()
    }

    #[test]
    fn healthy_windows_avoid_events() {
        let d = ds(3000);
        let cad = Duration::minutes(10);
        let onset = d.timestamps()[1500];
        let log = EventLog::new(vec![Event::new("T1", onset, onset + Duration::hours(3), EventCategory::ForcedOutage).unwrap()]);
        let w = healthy_windows(&d, &log, 100, 10, Duration::days(1), cad, 3);
        assert_eq!(w.len(), 10);
        for x in &w {
            assert!(x.end <= onset - Duration::days(1) || x.start > onset + Duration::hours(3) + Duration::days(1));
            assert_eq!(x.end - x.start, cad * 100);
        }
        for p in w.windows(2) {
            assert!(p[0].end <= p[1].start);
        }
        let f = fault_windows("T1", &log, 432, cad);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].end, onset);
        assert_eq!(f[0].end - f[0].start, Duration::hours(72));
    }

    #[test]
    fn index_round_trip_and_slicing() {
        let entries = vec![
            WindowIndexEntry {
                window_id: "a".into(),
                unit_id: "T1".into(),
                file: "a.csv".into(),
                label: WindowLabel::Faulty,
                onset: Some(Utc.with_ymd_and_hms(2021, 1, 2, 0, 0, 0).unwrap()),
            },
            WindowIndexEntry {
                window_id: "b".into(),
                unit_id: "T1".into(),
                file: "b.csv".into(),
                label: WindowLabel::Healthy,
                onset: None,
            },
        ];
        let mut buf = Vec::new();
        write_window_index(&entries, &mut buf).unwrap();
        assert_eq!(read_window_index(buf.as_slice()).unwrap(), entries);

        let csv = "timestamp,x\n2021-01-01T00:00:00Z,1\n2021-01-01T00:10:00Z,2\n2021-01-01T00:20:00Z,3\n";
        let mut out = Vec::new();
        let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 10, 0).unwrap();
        let n = slice_csv_by_time(csv.as_bytes(), &mut out, "timestamp", start, start + Duration::minutes(10)).unwrap();
        assert_eq!(n, 1);
        assert_eq!(String::from_utf8(out).unwrap(), "timestamp,x\n2021-01-01T00:10:00Z,2\n");
    }
}
