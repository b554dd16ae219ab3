//! Run configuration: one JSON document, optionally patched by flags and
//! `--set key=value` overrides before it is deserialized.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xcrc::data::SynthConfig;
use xcrc::eval::{SplitSpec, TrainSize};
use xcrc::pipeline::MethodSpec;

use crate::CliError;

/// Tuning partition seed when the config does not name one.
pub const DEFAULT_TUNING_SEED: u64 = 1_000_000;
pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Dataset manifest; a relative path is taken relative to the config
    /// file.
    Manifest(PathBuf),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default = "default_train")]
    pub train: TrainSize,
    #[serde(default = "default_true")]
    pub single_shot: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: default_train(),
            single_shot: true,
        }
    }
}

impl SplitConfig {
    pub fn with_seed(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train: self.train,
            seed,
            single_shot: self.single_shot,
        }
    }
}

fn default_train() -> TrainSize {
    TrainSize::Fraction(0.5)
}

fn default_true() -> bool {
    true
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_output() -> PathBuf {
    PathBuf::from("xcrc-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(flatten)]
    pub method: MethodSpec,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Seed of the λ-tuning partition; excluded from the trial seeds.
    #[serde(default)]
    pub tuning_seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.method.validate()?;
        if self.trials == 0 {
            return Err(CliError::Usage("trials must be at least 1".into()));
        }
        if let Some(grid) = &self.lambda_grid {
            if let Some(l) = grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                return Err(CliError::Usage(format!("λ grid values must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// Reads a JSON object from `path`, or starts from `{}`.
pub fn read_document(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if !doc.is_object() {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    }
    // Relative manifest paths are relative to the config file.
    if let Some(Value::String(p)) = doc.pointer_mut("/dataset/manifest") {
        let rel = PathBuf::from(&*p);
        if rel.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            *p = base.join(rel).to_string_lossy().into_owned();
        }
    }
    Ok(doc)
}

/// Sets the dotted `key` (e.g. `split.train.count`) to `value`, creating
/// intermediate objects.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("cannot set {key:?}: parent is not an object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("cannot set {key:?}: parent is not an object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies a `key=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(doc, key.trim(), value)
}

pub fn parse_document<T: serde::de::DeserializeOwned>(doc: Value) -> Result<T, CliError> {
    serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_overrides_create_objects() {
        let mut doc = json!({"split": {"single_shot": true}});
        apply_set(&mut doc, "split.train.count=3").unwrap();
        apply_set(&mut doc, "method=kernel_xcrc").unwrap();
        assert_eq!(doc, json!({"split": {"single_shot": true, "train": {"count": 3}}, "method": "kernel_xcrc"}));
        assert!(apply_set(&mut doc, "nokey").is_err());
        assert!(apply_set(&mut doc, "method.x=1").is_err());
    }

    #[test]
    fn minimal_config_defaults() {
        let cfg: RunConfig = parse_document(json!({
            "dataset": {"manifest": "d/manifest.json"},
            "method": "cosine"
        }))
        .unwrap();
        assert_eq!(cfg.trials, DEFAULT_TRIALS);
        assert_eq!(cfg.split, SplitConfig::default());
        assert_eq!(cfg.dataset, DatasetSource::Manifest("d/manifest.json".into()));
        assert!(parse_document::<RunConfig>(json!({"method": "cosine"})).is_err());
    }
}
