//! SCADA CSV ingestion driven by a JSON schema file.
//!
//! The schema maps logical feature names to source column headers. Angle
//! columns (wind direction in degrees) expand into a sine and a cosine feature.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{RowStatus, TurbineDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Linear,
    /// Angle in degrees, encoded as `Sine <name>` and `Cosine <name>`.
    AngleDegrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub column: String,
    #[serde(default = "linear")]
    pub kind: FeatureKind,
}

fn linear() -> FeatureKind {
    FeatureKind::Linear
}

/// Column mapping for one SCADA export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub version: u32,
    pub timestamp_column: String,
    pub power_column: String,
    #[serde(default)]
    pub status_column: Option<String>,
    pub features: Vec<FeatureColumn>,
}

impl Schema {
    pub fn from_json(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema lists no features".into()));
        }
        let names = self.feature_names();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Schema(format!("feature {dup:?} appears twice")));
        }
        Ok(())
    }

    /// Model feature names after angle expansion, in model input order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.features {
            match f.kind {
                FeatureKind::Linear => out.push(f.name.clone()),
                FeatureKind::AngleDegrees => {
                    out.push(format!("Sine {}", f.name));
                    out.push(format!("Cosine {}", f.name));
                }
            }
        }
        out
    }

    /// Schema of an already-expanded dataset: every feature maps to a column
    /// of the same name.
    pub fn identity(feature_names: &[String]) -> Self {
        Self {
            version: 1,
            timestamp_column: "timestamp".into(),
            power_column: "power_kw".into(),
            status_column: Some("status".into()),
            features: feature_names
                .iter()
                .map(|n| FeatureColumn {
                    name: n.clone(),
                    column: n.clone(),
                    kind: FeatureKind::Linear,
                })
                .collect(),
        }
    }

    /// The 41-feature operational and environmental set. Column headers equal
    /// the logical names; edit the `column` fields to match a real export.
    pub fn operational() -> Self {
        let linear_names = [
            "Avg. wind speed",
            "Stdev. wind speed",
            "Min. wind speed",
            "Max. wind speed",
            "Avg. rear bearing temp.",
            "Stdev. rear bearing temp.",
            "Min. rear bearing temp.",
            "Max. rear bearing temp.",
            "Avg. transformer temp.",
            "Avg. gear oil inlet temp.",
            "Avg. top box temp.",
            "Avg. conv. ambient temp.",
            "Avg. motor axis1 temp.",
            "Avg. CPU temp.",
            "Avg. blade angle pitch B",
            "Avg. gear oil inlet press",
            "Tower acceleration x",
            "Avg. front bearing temp.",
            "Stdev. front bearing temp.",
            "Min. front bearing temp.",
            "Max. front bearing temp.",
            "Avg. rotor bearing temp.",
            "Avg. stator1 temp.",
            "Avg. nacelle ambient temp.",
            "Avg. nacelle temp.",
            "Avg. gear oil temp.",
            "Avg. drive train acceleration",
            "Avg. hub temp.",
            "Avg. transformer cell temp.",
            "Avg. motor axis2 temp.",
            "Avg. blade angle pitch A",
            "Avg. blade angle pitch C",
            "Avg. gear oil pump press",
            "Tower acceleration y",
            "Stdev. wind speed dir.",
        ];
        let angle_names = ["avg. wind speed dir.", "max. wind speed dir.", "min. wind speed dir."];
        let mut features: Vec<FeatureColumn> = linear_names
            .iter()
            .map(|n| FeatureColumn {
                name: n.to_string(),
                column: n.to_string(),
                kind: FeatureKind::Linear,
            })
            .collect();
        features.extend(angle_names.iter().map(|n| FeatureColumn {
            name: n.to_string(),
            column: n.to_string(),
            kind: FeatureKind::AngleDegrees,
        }));
        Self {
            version: 1,
            timestamp_column: "Date and time".into(),
            power_column: "Power (kW)".into(),
            status_column: None,
            features,
        }
    }
}

/// Counts and first few reasons for rows that did not make it into the dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    pub dropped_unparseable: usize,
    pub dropped_duplicate_time: usize,
    pub dropped_off_cadence: usize,
    pub problems: Vec<String>,
}

const MAX_REPORTED_PROBLEMS: usize = 20;

impl IngestReport {
    fn note(&mut self, msg: String) {
        if self.problems.len() < MAX_REPORTED_PROBLEMS {
            self.problems.push(msg);
        }
    }
}

/// Parses ISO-8601 timestamps. Offsets are converted to UTC; naive values are
/// taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn is_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("null")
}

enum Field {
    Value(f64),
    Missing,
    Bad,
}

fn parse_field(s: &str) -> Field {
    if is_missing(s) {
        return Field::Missing;
    }
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Field::Value(v),
        Ok(_) => Field::Missing,
        Err(_) => Field::Bad,
    }
}

/// Column positions resolved against a header row.
struct Resolved {
    timestamp: usize,
    power: usize,
    status: Option<usize>,
    features: Vec<(usize, FeatureKind)>,
}

fn resolve(schema: &Schema, header: &[String]) -> Result<Resolved> {
    let lookup: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find = |col: &str| {
        lookup
            .get(col.trim())
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing column {col:?}")))
    };
    Ok(Resolved {
        timestamp: find(&schema.timestamp_column)?,
        power: find(&schema.power_column)?,
        status: match &schema.status_column {
            Some(c) => lookup.get(c.trim()).copied(),
            None => None,
        },
        features: schema
            .features
            .iter()
            .map(|f| find(&f.column).map(|i| (i, f.kind)))
            .collect::<Result<_>>()?,
    })
}

/// One parsed record before dataset assembly.
struct Record {
    time: DateTime<Utc>,
    features: Vec<f64>,
    power: f64,
    status: RowStatus,
}

fn parse_record(
    fields: &[&str],
    cols: &Resolved,
    line: usize,
    report: &mut IngestReport,
) -> Option<Record> {
    let get = |i: usize| fields.get(i).copied().unwrap_or("");
    let Some(time) = parse_timestamp(get(cols.timestamp)) else {
        report.dropped_unparseable += 1;
        report.note(format!("line {line}: bad timestamp {:?}", get(cols.timestamp)));
        return None;
    };
    let mut features = Vec::with_capacity(cols.features.len() * 2);
    let mut missing = false;
    let mut bad = None;
    let mut push = |i: usize, kind: FeatureKind, features: &mut Vec<f64>| match parse_field(get(i)) {
        Field::Value(v) => match kind {
            FeatureKind::Linear => features.push(v),
            FeatureKind::AngleDegrees => {
                let r = v.to_radians();
                features.push(r.sin());
                features.push(r.cos());
            }
        },
        Field::Missing => missing = true,
        Field::Bad => bad = Some(i),
    };
    for &(i, kind) in &cols.features {
        push(i, kind, &mut features);
    }
    let power = match parse_field(get(cols.power)) {
        Field::Value(v) => Some(v),
        Field::Missing => {
            missing = true;
            None
        }
        Field::Bad => {
            bad = Some(cols.power);
            None
        }
    };
    if let Some(i) = bad {
        report.dropped_unparseable += 1;
        report.note(format!("line {line}: unparseable value {:?} in column {i}", get(i)));
        return None;
    }
    if missing {
        report.dropped_missing += 1;
        return None;
    }
    let status = match cols.status.map(get) {
        Some(s) => match s.parse() {
            Ok(st) => st,
            Err(e) => {
                report.dropped_unparseable += 1;
                report.note(format!("line {line}: {e}"));
                return None;
            }
        },
        None => RowStatus::Normal,
    };
    Some(Record {
        time,
        features,
        power: power.expect("checked above"),
        status,
    })
}

fn assemble(
    unit_id: &str,
    schema: &Schema,
    mut records: Vec<Record>,
    cadence: chrono::Duration,
    report: &mut IngestReport,
) -> Result<TurbineDataset> {
    records.sort_by_key(|r| r.time);
    let before = records.len();
    records.dedup_by_key(|r| r.time);
    report.dropped_duplicate_time += before - records.len();

    if let Some(origin) = records.first().map(|r| r.time) {
        let step = cadence.num_seconds();
        let before = records.len();
        records.retain(|r| (r.time - origin).num_seconds() % step == 0);
        report.dropped_off_cadence += before - records.len();
    }
    report.rows_kept = records.len();

    let names = schema.feature_names();
    let mut timestamps = Vec::with_capacity(records.len());
    let mut features = Vec::with_capacity(records.len() * names.len());
    let mut target = Vec::with_capacity(records.len());
    let mut status = Vec::with_capacity(records.len());
    for r in records {
        timestamps.push(r.time);
        features.extend(r.features);
        target.push(r.power);
        status.push(r.status);
    }
    TurbineDataset::new(unit_id, names, timestamps, features, target, status)
}

/// Reads a SCADA CSV. Rows with a missing required value or an unparseable
/// field are skipped and counted; a missing column is an error.
pub fn ingest_reader<R: Read>(
    reader: R,
    unit_id: &str,
    schema: &Schema,
    cadence: chrono::Duration,
) -> Result<(TurbineDataset, IngestReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let cols = resolve(schema, &header)?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        report.rows_read += 1;
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.dropped_unparseable += 1;
                report.note(format!("line {line}: {e}"));
                continue;
            }
        };
        let fields: Vec<&str> = rec.iter().collect();
        if let Some(r) = parse_record(&fields, &cols, line, &mut report) {
            records.push(r);
        }
    }
    let ds = assemble(unit_id, schema, records, cadence, &mut report)?;
    Ok((ds, report))
}

pub fn ingest(path: &Path, unit_id: &str, schema: &Schema) -> Result<(TurbineDataset, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), unit_id, schema, super::default_cadence())
}

/// Reads line-delimited JSON objects keyed by column header.
pub fn ingest_jsonl_reader<R: BufRead>(
    reader: R,
    unit_id: &str,
    schema: &Schema,
    cadence: chrono::Duration,
) -> Result<(TurbineDataset, IngestReport)> {
    schema.validate()?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut header: Vec<String> = Vec::new();
    let mut cols: Option<Resolved> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        let obj: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(&line) {
            Ok(o) => o,
            Err(e) => {
                report.dropped_unparseable += 1;
                report.note(format!("line {}: {e}", i + 1));
                continue;
            }
        };
        if cols.is_none() {
            header = obj.keys().cloned().collect();
            cols = Some(resolve(schema, &header)?);
        }
        let text: Vec<String> = header
            .iter()
            .map(|k| match obj.get(k) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Null) | None => String::new(),
                Some(v) => v.to_string(),
            })
            .collect();
        let fields: Vec<&str> = text.iter().map(String::as_str).collect();
        if let Some(r) = parse_record(&fields, cols.as_ref().expect("resolved"), i + 1, &mut report) {
            records.push(r);
        }
    }
    let ds = assemble(unit_id, schema, records, cadence, &mut report)?;
    Ok((ds, report))
}

/// Picks CSV or line-delimited JSON by file extension.
pub fn ingest_auto(path: &Path, unit_id: &str, schema: &Schema) -> Result<(TurbineDataset, IngestReport)> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "jsonl" || ext == "ndjson" {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        ingest_jsonl_reader(BufReader::new(file), unit_id, schema, super::default_cadence())
    } else {
        ingest(path, unit_id, schema)
    }
}

/// Writes a dataset in the layout described by [`Schema::identity`].
pub fn write_dataset_csv<W: std::io::Write>(ds: &TurbineDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.feature_names().iter().cloned());
    header.push("power_kw".into());
    header.push("status".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(format_timestamp(&ds.timestamps()[i]));
        rec.extend(ds.row(i).iter().map(|v| format!("{v:?}")));
        rec.push(format!("{:?}", ds.target()[i]));
        rec.push(ds.status()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_schema() -> Schema {
        Schema {
            version: 1,
            timestamp_column: "time".into(),
            power_column: "power".into(),
            status_column: None,
            features: vec![
                FeatureColumn {
                    name: "speed".into(),
                    column: "ws".into(),
                    kind: FeatureKind::Linear,
                },
                FeatureColumn {
                    name: "dir".into(),
                    column: "wd".into(),
                    kind: FeatureKind::AngleDegrees,
                },
            ],
        }
    }

    fn read(csv: &str) -> (TurbineDataset, IngestReport) {
        ingest_reader(csv.as_bytes(), "T1", &small_schema(), super::super::default_cadence()).unwrap()
    }

    #[test]
    fn direction_becomes_sine_and_cosine() {
        let (ds, _) = read("time,ws,wd,power\n2020-01-01T00:00:00Z,5.0,90,100\n2020-01-01T00:10:00Z,6.0,0,120\n2020-01-01T00:20:00Z,6.0,360,120\n");
        assert_eq!(ds.feature_names(), &["speed", "Sine dir", "Cosine dir"]);
        assert!((ds.row(0)[1] - 1.0).abs() < 1e-15);
        assert!(ds.row(0)[2].abs() < 1e-15);
        assert!((ds.row(1)[1] - ds.row(2)[1]).abs() < 1e-15);
        assert!((ds.row(1)[2] - ds.row(2)[2]).abs() < 1e-15);
    }

    #[test]
    fn missing_and_bad_rows_are_counted() {
        let (ds, report) = read(
            "time,ws,wd,power\n\
             2020-01-01 00:00:00,5.0,90,100\n\
             2020-01-01 00:10:00,,90,100\n\
             2020-01-01 00:20:00,5.0,NaN,100\n\
             2020-01-01 00:30:00,abc,90,100\n\
             not-a-time,5.0,90,100\n\
             2020-01-01 00:40:00,5.0,90,100\n\
             2020-01-01 00:40:00,7.0,90,100\n\
             2020-01-01 00:45:00,7.0,90,100\n",
        );
        assert_eq!(ds.len(), 2);
        assert_eq!(report.rows_read, 8);
        assert_eq!(report.dropped_missing, 2);
        assert_eq!(report.dropped_unparseable, 2);
        assert_eq!(report.dropped_duplicate_time, 1);
        assert_eq!(report.dropped_off_cadence, 1);
        assert_eq!(report.rows_kept, 2);
    }

    #[test]
    fn missing_column_is_named() {
        let err = ingest_reader("time,ws,power\n".as_bytes(), "T1", &small_schema(), super::super::default_cadence())
            .unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("\"wd\"")), "{err}");
    }

    #[test]
    fn operational_set_has_41_features() {
        let s = Schema::operational();
        assert_eq!(s.feature_names().len(), 41);
        assert_eq!(s.features.len(), 38);
        assert!(s.feature_names().contains(&"Cosine min. wind speed dir.".to_string()));
    }

    #[test]
    fn jsonl_matches_csv() {
        let csv = "time,ws,wd,power\n2020-01-01T00:00:00Z,5.0,90,100\n2020-01-01T00:10:00Z,6.5,180,150\n";
        let jsonl = "{\"time\":\"2020-01-01T00:00:00Z\",\"ws\":5.0,\"wd\":90,\"power\":100}\n\
                     {\"time\":\"2020-01-01T00:10:00Z\",\"ws\":6.5,\"wd\":180,\"power\":150}\n";
        let (a, _) = read(csv);
        let (b, _) = ingest_jsonl_reader(jsonl.as_bytes(), "T1", &small_schema(), super::super::default_cadence()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_schema_round_trip() {
        let (ds, _) = read("time,ws,wd,power\n2020-01-01T00:00:00Z,5.0,90,100\n2020-01-01T00:10:00Z,6.5,180,150\n");
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let schema = Schema::identity(ds.feature_names());
        let (back, _) = ingest_reader(buf.as_slice(), "T1", &schema, super::super::default_cadence()).unwrap();
        assert_eq!(back, ds);
    }
}
