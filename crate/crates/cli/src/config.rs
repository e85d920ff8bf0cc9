//! `--config` overrides: a JSON object with optional `register` and `train`
//! sections, each a partial copy of the library config it patches.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pcnet::{RegConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub register: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Value>,
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_value(serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        Ok(serde_json::from_value(v)?)
    }

    /// `other` on top of `self`.
    pub fn then(&self, other: &Self) -> Self {
        let stack = |a: &Option<Value>, b: &Option<Value>| -> Option<Value> {
            match (a, b) {
                (Some(a), Some(b)) => {
                    let mut a = a.clone();
                    merge_loose(&mut a, b);
                    Some(a)
                }
                (a, None) => a.clone(),
                (None, b) => b.clone(),
            }
        };
        Self {
            register: stack(&self.register, &other.register),
            train: stack(&self.train, &other.train),
        }
    }

    pub fn register_config(&self) -> Result<RegConfig> {
        let cfg: RegConfig = patched(&RegConfig::default(), self.register.as_ref()).context("register config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        patched(&TrainConfig::default(), self.train.as_ref()).context("train config")
    }
}

fn merge_loose(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_loose(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Replaces the fields of `base` named in `patch`, recursing into nested
/// objects; unknown keys are errors.
fn merge_strict(base: &mut Value, patch: &Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = format!("{at}.{k}");
                match b.get_mut(k) {
                    Some(slot) => merge_strict(slot, v, &path)?,
                    None => bail!("unknown config key {}", path.trim_start_matches('.')),
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
    Ok(())
}

pub fn patched<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let mut v = serde_json::to_value(base)?;
    merge_strict(&mut v, patch, "")?;
    Ok(serde_json::from_value(v)?)
}
