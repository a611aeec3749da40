//! Layered configuration: built-in defaults, then a JSON config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use kwcontrast::{ExperimentConfig, SweepSpec, SyntheticSpec};

/// Recursively overlays `top` onto `base`. Objects merge key by key; any other
/// value replaces the base value outright.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_config_file(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("config file {} is not valid JSON", path.display()))?;
    if !value.is_object() {
        bail!("config file {} must contain a JSON object", path.display());
    }
    Ok(value)
}

/// Deserializes `defaults` overlaid with `file`.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, file: Value) -> Result<T> {
    let mut base = serde_json::to_value(defaults)?;
    merge(&mut base, file);
    serde_json::from_value(base).context("invalid configuration")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Default,
    Healthy,
    Clinical,
}

impl Preset {
    pub fn spec(self) -> SyntheticSpec {
        match self {
            Preset::Default => SyntheticSpec::default(),
            Preset::Healthy => SyntheticSpec::healthy(),
            Preset::Clinical => SyntheticSpec::clinical(),
        }
    }
}

/// Effective settings of `generate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub preset: Preset,
    pub synth: SyntheticSpec,
}

/// Effective settings of `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub cohort: PathBuf,
    pub experiment: ExperimentConfig,
}

/// Effective settings of `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub cohort: PathBuf,
    pub checkpoint: PathBuf,
    pub downstream: bool,
    pub experiment: ExperimentConfig,
}

/// Effective settings of `sweep`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub jobs: usize,
    pub spec: SweepSpec,
}

/// Removes a top-level key from a config object.
pub fn take_key(file: &mut Value, key: &str) -> Option<Value> {
    file.as_object_mut().and_then(|m| m.remove(key))
}

pub fn take_path(file: &mut Value, key: &str) -> Result<Option<PathBuf>> {
    match take_key(file, key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(other) => bail!("config key '{key}' must be a path string, got {other}"),
    }
}
