//! Flat `key = value` run configuration.
//!
//! Keys are namespaced: `model.*` maps onto [`ModelConfig`], `gen.*` onto
//! [`GeneratorSpec`], `meal.*` onto [`DetectorConfig`] and `train.*` holds the
//! training-loop options. Unknown keys are rejected. Command-line overrides
//! are applied on top of the file with [`RunConfig::set`].

use std::collections::BTreeMap;
use std::path::Path;

use cgm_core::train::TrainOptions;
use cgm_core::ModelConfig;
use cgm_data::GeneratorSpec;
use cgm_meal::DetectorConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

const TRAIN_KEYS: [&str; 4] = ["train.stride", "train.epochs", "train.clip_norm", "train.restore_best"];
pub const DEFAULT_STRIDE: usize = 3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if cfg.entries.contains_key(k) {
                return Err(CliError::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
            cfg.entries.insert(k.to_string(), v.trim().to_string());
        }
        cfg.check_all()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets one key after checking it exists and its value parses.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut trial = self.clone();
        trial.entries.insert(key.to_string(), value.to_string());
        trial.check_key(key)?;
        *self = trial;
        Ok(())
    }

    /// Applies `key=value` overrides, validating once all are in place so
    /// that coupled keys can change together.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        let mut trial = self.clone();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            trial.entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        trial.check_all()?;
        *self = trial;
        Ok(())
    }

    fn check_all(&self) -> Result<()> {
        self.entries.keys().try_for_each(|k| self.check_key(k))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn check_key(&self, key: &str) -> Result<()> {
        match key.split_once('.') {
            Some(("model", _)) => self.model().map(drop),
            Some(("gen", _)) => self.generator().map(drop),
            Some(("meal", _)) => self.detector().map(drop),
            Some(("train", _)) if TRAIN_KEYS.contains(&key) => self.train_options().map(drop),
            _ => Err(CliError::Config(format!("unknown key {key}"))),
        }
    }

    fn section<T: Serialize + DeserializeOwned>(&self, prefix: &str, base: T) -> Result<T> {
        let mut value = serde_json::to_value(base)?;
        let obj = value.as_object_mut().expect("config structs serialize to objects");
        for (k, v) in &self.entries {
            let Some(field) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) else {
                continue;
            };
            let slot = obj
                .get_mut(field)
                .ok_or_else(|| CliError::Config(format!("unknown key {k}")))?;
            *slot = parse_like(slot, v).ok_or_else(|| CliError::Config(format!("{k}: cannot parse {v:?}")))?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{prefix}: {e}")))
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let cfg = self.section("model", ModelConfig::desk())?;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn generator(&self) -> Result<GeneratorSpec> {
        let spec = self.section("gen", GeneratorSpec::default())?;
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        let cfg = self.section("meal", DetectorConfig::default())?;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn stride(&self) -> Result<usize> {
        match self.get("train.stride") {
            None => Ok(DEFAULT_STRIDE),
            Some(v) => v
                .parse()
                .ok()
                .filter(|&s| s > 0)
                .ok_or_else(|| CliError::Config(format!("train.stride: expected a positive integer, got {v:?}"))),
        }
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let mut o = TrainOptions::default();
        if let Some(v) = self.get("train.epochs") {
            o.epochs = Some(v.parse().map_err(|_| CliError::Config(format!("train.epochs: {v:?}")))?);
        }
        if let Some(v) = self.get("train.clip_norm") {
            o.clip_norm = match v {
                "none" => None,
                _ => Some(v.parse().map_err(|_| CliError::Config(format!("train.clip_norm: {v:?}")))?),
            };
        }
        if let Some(v) = self.get("train.restore_best") {
            o.restore_best = v.parse().map_err(|_| CliError::Config(format!("train.restore_best: {v:?}")))?;
        }
        self.stride()?;
        Ok(o)
    }

    /// The explicit entries, one `key = value` per line.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every effective setting of the given sections, defaults included.
    pub fn render_effective(&self, sections: &[&str]) -> Result<String> {
        let mut out = String::new();
        for s in sections {
            let value = match *s {
                "model" => serde_json::to_value(self.model()?)?,
                "gen" => serde_json::to_value(self.generator()?)?,
                "meal" => serde_json::to_value(self.detector()?)?,
                "train" => {
                    let o = self.train_options()?;
                    serde_json::json!({
                        "stride": self.stride()?,
                        "epochs": o.epochs.map_or("model.max_epochs".to_string(), |e| e.to_string()),
                        "clip_norm": o.clip_norm.map_or("none".to_string(), |c| c.to_string()),
                        "restore_best": o.restore_best,
                    })
                }
                other => return Err(CliError::Config(format!("unknown section {other}"))),
            };
            for (k, v) in value.as_object().expect("object") {
                out += &format!("{s}.{k} = {}\n", render_value(v));
            }
        }
        Ok(out)
    }
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(xs) => xs.iter().map(render_value).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Parses `text` into a value of the same JSON type as `like`.
fn parse_like(like: &Value, text: &str) -> Option<Value> {
    match like {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_f64() => text.parse::<f64>().ok().and_then(|x| serde_json::Number::from_f64(x).map(Value::Number)),
        Value::Number(_) => text
            .parse::<u64>()
            .ok()
            .map(Value::from)
            .or_else(|| text.parse::<f64>().ok().and_then(|x| serde_json::Number::from_f64(x).map(Value::Number))),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::from(0.0));
            text.split(',')
                .map(|t| parse_like(&elem, t.trim()))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        Value::Null => serde_json::from_str(text).ok(),
        Value::Object(_) => None,
    }
}
