//! Run configuration file (TOML).
//!
//! Values come from, in increasing precedence: built-in defaults, the
//! config file, `PEP_`-prefixed environment variables and command-line
//! flags. An environment variable names a key path with `__` between
//! segments, e.g. `PEP_TRAIN__LR0=0.001` or
//! `PEP_DATA__GENERATOR__WEIGHTS__STRAIGHT=0.5`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::ScoreMode;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::scene::GeneratorConfig;
use crate::train::TrainConfig;

pub const ENV_PREFIX: &str = "PEP_";

/// Data generation and file locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Generator seed.
    pub seed: u64,
    /// Scene file read by `train` and written by `generate`.
    pub train_path: PathBuf,
    /// Scene file read by `eval` and `equivariance`.
    pub test_path: PathBuf,
    pub generator: GeneratorConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_path: PathBuf::from("scenes.jsonl"),
            test_path: PathBuf::from("scenes.jsonl"),
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub score_mode: ScoreMode,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn prefixed(section: &str, r: Result<()>, out: &mut Vec<String>) {
    match r {
        Ok(()) => {}
        Err(Error::Validation(items)) => {
            out.extend(items.into_iter().map(|m| format!("{section}.{m}")))
        }
        Err(other) => out.push(format!("{section}: {other}")),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML text; parsing it yields `self` again.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every problem, each prefixed with its key path.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        prefixed("model", self.model.validate(), &mut bad);
        prefixed("data.generator", self.data.generator.validate(), &mut bad);
        prefixed("train", self.train.validate(), &mut bad);
        prefixed("eval", self.eval.validate(), &mut bad);
        let g = &self.data.generator;
        if g.past_steps != self.model.past_steps {
            bad.push(format!(
                "data.generator.past_steps {} differs from model.past_steps {}",
                g.past_steps, self.model.past_steps
            ));
        }
        if g.future_steps != self.model.future_steps {
            bad.push(format!(
                "data.generator.future_steps {} differs from model.future_steps {}",
                g.future_steps, self.model.future_steps
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    /// Applies `PEP_`-prefixed overrides from `vars`; other variables are
    /// ignored. Values are parsed as TOML literals, falling back to a
    /// plain string.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.as_ref().strip_prefix(ENV_PREFIX).map(|key| {
                    (
                        key.to_ascii_lowercase().replace("__", "."),
                        v.as_ref().to_string(),
                    )
                })
            })
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            self.set(&key, &value)
                .map_err(|e| Error::Config(format!("{ENV_PREFIX} override of `{key}`: {e}")))?;
        }
        Ok(())
    }

    /// Sets a dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let parsed = parse_literal(value);
        let mut slot = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (n, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` is not a config key")))?;
            let next = table
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown key `{}`", parts[..=n].join("."))))?;
            slot = next;
        }
        if slot.is_table() {
            return Err(Error::Config(format!("`{key}` is a section, not a value")));
        }
        *slot = coerce(parsed, slot);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {}", e.message())))?;
        Ok(())
    }

    /// Every leaf key with its default value, sorted by key.
    pub fn documented_keys() -> Vec<(String, String)> {
        let root = toml::Value::try_from(RunConfig::default()).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &root, &mut out);
        out
    }
}

fn parse_literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Integer literals may stand for floats, e.g. `PEP_TRAIN__ALPHA=1`.
fn coerce(value: toml::Value, existing: &toml::Value) -> toml::Value {
    match (value, existing) {
        (toml::Value::Integer(i), toml::Value::Float(_)) => toml::Value::Float(i as f64),
        (v, _) => v,
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
