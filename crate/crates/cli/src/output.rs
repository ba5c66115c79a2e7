//! Staged artifact writes and the per-directory run manifest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::Serialize;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub started_at: DateTime<Utc>,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config_path: Option<PathBuf>,
    /// Fully resolved configuration, after flag overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub args: Vec<String>,
}

/// Collects a run's artifacts in memory and writes them only once the whole
/// computation has succeeded. Each file goes through a temp file and a rename.
pub struct Run {
    out_dir: PathBuf,
    subcommand: &'static str,
    seed: u64,
    config_path: Option<PathBuf>,
    started: Instant,
    started_at: DateTime<Utc>,
    inputs: Vec<PathBuf>,
    staged: Vec<(PathBuf, Vec<u8>)>,
}

impl Run {
    pub fn new(out_dir: &Path, subcommand: &'static str, seed: u64, config_path: Option<&Path>) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            subcommand,
            seed,
            config_path: config_path.map(Path::to_path_buf),
            started: Instant::now(),
            started_at: Utc::now(),
            inputs: Vec::new(),
            staged: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// `name` is relative to the output directory and may not leave it.
    pub fn stage(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) -> Result<()> {
        let name = name.into();
        let inside = name
            .components()
            .all(|c| matches!(c, Component::Normal(_)));
        if !inside || name.as_os_str().is_empty() {
            bail!("artifact path {} escapes the output directory", name.display());
        }
        if self.staged.iter().any(|(n, _)| *n == name) {
            bail!("artifact {} staged twice", name.display());
        }
        self.staged.push((name, bytes));
        Ok(())
    }

    pub fn stage_json<T: Serialize>(&mut self, name: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.stage(name, bytes)
    }

    pub fn commit<C: Serialize>(self, config: &C) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let mut outputs = Vec::with_capacity(self.staged.len());
        for (name, bytes) in &self.staged {
            let path = self.out_dir.join(name);
            let dir = path.parent().unwrap_or(&self.out_dir);
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_atomic(dir, &path, bytes)?;
            outputs.push(path);
        }
        let manifest = RunManifest {
            subcommand: self.subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            seed: self.seed,
            config_path: self.config_path,
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: outputs.clone(),
            args: std::env::args().collect(),
        };
        let mut line = serde_json::to_vec(&manifest)?;
        line.push(b'\n');
        let path = self.out_dir.join(MANIFEST);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        f.write_all(&line).with_context(|| format!("appending to {}", path.display()))?;
        Ok(outputs)
    }
}

fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
