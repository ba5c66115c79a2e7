//! Locating and reading the datasets a subcommand consumes.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, Duration, Utc};
use fleetmon_core::data::{self, ingest_auto, IngestReport, Schema};
use fleetmon_core::{Error, TurbineDataset};
use serde::de::DeserializeOwned;

/// Columns of the expanded layout that are not features.
const RESERVED: [&str; 3] = ["timestamp", "power_kw", "status"];

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Reads a subcommand's JSON config, or its defaults when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("reading config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
}

pub fn require<'a, T>(value: &'a Option<T>, what: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| config_error(format!("missing {what}")))
}

pub fn unit_for(path: &Path, explicit: Option<&String>) -> String {
    explicit.cloned().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unit".into())
    })
}

/// An explicit schema file wins. Otherwise the file is read in the expanded
/// layout, with feature names taken from the model when one is given and from
/// the header when not.
pub fn schema_for(path: &Path, explicit: Option<&Path>, model_features: Option<&[String]>) -> Result<Schema> {
    if let Some(p) = explicit {
        return Ok(Schema::load(p)?);
    }
    if let Some(names) = model_features {
        return Ok(Schema::identity(names));
    }
    let names: Vec<String> = header(path)?
        .into_iter()
        .filter(|h| !RESERVED.contains(&h.as_str()))
        .collect();
    if names.is_empty() {
        return Err(Error::Schema(format!("{} has no feature columns", path.display())).into());
    }
    Ok(Schema::identity(&names))
}

fn header(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("jsonl" | "ndjson")
    );
    if is_jsonl {
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let obj: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            return Ok(obj.keys().cloned().collect());
        }
        return Err(Error::Data(format!("{} is empty", path.display())).into());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(rdr.headers().map_err(Error::from)?.iter().map(str::to_string).collect())
}

pub fn load_dataset(path: &Path, unit: &str, schema: &Schema) -> Result<(TurbineDataset, IngestReport)> {
    let (ds, report) = ingest_auto(path, unit, schema)?;
    if report.rows_kept < report.rows_read {
        eprintln!(
            "{}: kept {} of {} rows",
            path.display(),
            report.rows_kept,
            report.rows_read
        );
    }
    Ok((ds, report))
}

/// Places residuals on the regular time grid, marking skipped intervals as
/// missing so the chart counts them as gaps.
pub fn regrid(times: &[DateTime<Utc>], values: &[f64]) -> (Vec<DateTime<Utc>>, Vec<f64>) {
    let cadence: Duration = data::default_cadence();
    let mut t_out = Vec::with_capacity(times.len());
    let mut v_out = Vec::with_capacity(values.len());
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        if i > 0 {
            let mut next = times[i - 1] + cadence;
            while next < t {
                t_out.push(next);
                v_out.push(f64::NAN);
                next += cadence;
            }
        }
        t_out.push(t);
        v_out.push(v);
    }
    (t_out, v_out)
}
