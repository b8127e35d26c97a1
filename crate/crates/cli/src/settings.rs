//! `key=value` configuration files and the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use deblur_core::blindestim::EstimationConfig;
use deblur_core::restore::RestoreConfig;
use deblur_core::{DeblurError, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Fully resolved settings of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub estimation: EstimationConfig,
    pub restore: RestoreConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| DeblurError::Parameter(format!("{key}: cannot parse '{value}': {e}")))
}

impl Settings {
    /// Applies one `key=value` pair. Keys starting with `restore.` address the
    /// non-blind stage, everything else the estimator. Returns an adjustment
    /// note when the value was changed on the way in.
    pub fn set(&mut self, key: &str, value: &str) -> Result<Option<String>> {
        match key.strip_prefix("restore.") {
            Some("method") => self.restore.method = value.trim().parse()?,
            Some("weight") => self.restore.weight = parse(key, value)?,
            Some("iterations") => self.restore.iterations = parse(key, value)?,
            Some("smoothing") => self.restore.smoothing = parse(key, value)?,
            Some("taper") => self.restore.taper = parse(key, value)?,
            Some("bicg_tolerance") => self.restore.inner.tolerance = parse(key, value)?,
            Some("bicg_max_iterations") => self.restore.inner.max_iterations = parse(key, value)?,
            Some(other) => return Err(DeblurError::Parameter(format!("unknown restore key '{other}'"))),
            None => return self.estimation.set(key, value),
        }
        Ok(None)
    }

    /// Reads a config file. A JSON document (a previous run's manifest, or a
    /// bare settings object) is taken as a whole; anything else is parsed as
    /// `key=value` lines with `#` comments.
    pub fn load(path: &Path, notes: &mut Vec<String>) -> Result<Settings> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DeblurError::Format {
                what: "config file",
                reason: e.to_string(),
            })?;
            let body = value.get("config").cloned().unwrap_or(value);
            return serde_json::from_value(body).map_err(|e| DeblurError::Format {
                what: "config file",
                reason: e.to_string(),
            });
        }
        let mut s = Settings::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DeblurError::Format {
                what: "config file",
                reason: format!("line {}: expected key=value", no + 1),
            })?;
            notes.extend(s.set(k.trim(), v)?);
        }
        Ok(s)
    }
}

/// Record of one invocation, sufficient to repeat it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Settings,
    pub seed: u64,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Settings, threads: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: config.clone(),
            seed: config.estimation.seed,
            threads,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
