//! Versioned JSON checkpoints.
//!
//! A checkpoint holds the model and training configuration, every
//! parameter tensor by name, the Adam moments, the completed epoch count
//! and the history so far. Floats are written in shortest round-trip form,
//! so loading restores every bit.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, OptimizerState, TrainConfig, Trainer};
use crate::decode::ScoreMode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelOptions, ModelParams, Params};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "pep-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `bytes` to a hidden sibling file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerFile {
    step: u64,
    m: Vec<NamedTensor>,
    v: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: ModelConfig,
    options: ModelOptions,
    train: TrainConfig,
    score_mode: ScoreMode,
    epoch: usize,
    params: Vec<NamedTensor>,
    optimizer: OptimizerFile,
    history: Vec<EpochRecord>,
}

fn to_named(p: &Params<Tensor>) -> Vec<NamedTensor> {
    p.named()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            rows: t.rows(),
            cols: t.cols(),
            data: t.into_data(),
        })
        .collect()
}

/// Rebuilds a tree shaped by `config` from named tensors; every name must
/// be present exactly once with the right shape.
fn from_named(config: ModelConfig, named: Vec<NamedTensor>, what: &str) -> Result<Params<Tensor>> {
    let reference = ModelParams::init(config, 0)?.tensors;
    let expected = reference.names().len();
    if named.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{what}: {} tensors, model configuration needs {expected}",
            named.len()
        )));
    }
    let mut by_name: HashMap<String, NamedTensor> = HashMap::new();
    for t in named {
        if by_name.contains_key(&t.name) {
            return Err(Error::Checkpoint(format!(
                "{what}: duplicate tensor {}",
                t.name
            )));
        }
        by_name.insert(t.name.clone(), t);
    }
    let mut problems = Vec::new();
    let out = reference.map(|name, _, r| match by_name.remove(name) {
        None => {
            problems.push(format!("missing {name}"));
            r.clone()
        }
        Some(t) if [t.rows, t.cols] != r.shape() => {
            problems.push(format!(
                "{name} has shape {}x{}, model configuration needs {}x{}",
                t.rows,
                t.cols,
                r.rows(),
                r.cols()
            ));
            r.clone()
        }
        Some(t) => match Tensor::new(t.rows, t.cols, t.data) {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                r.clone()
            }
        },
    });
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Checkpoint(format!(
            "{what}: {}",
            problems.join("; ")
        )))
    }
}

impl Trainer {
    pub fn to_checkpoint_string(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: *self.model.config(),
            options: self.model.options,
            train: self.config.clone(),
            score_mode: self.score_mode,
            epoch: self.epoch,
            params: to_named(&self.model.params.tensors),
            optimizer: OptimizerFile {
                step: self.optimizer.step,
                m: to_named(&self.optimizer.m),
                v: to_named(&self.optimizer.v),
            },
            history: self.history.clone(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_checkpoint_string().as_bytes())
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("not a checkpoint file: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unrecognized format {other:?}, expected {CHECKPOINT_FORMAT:?}"
                )))
            }
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported version {other:?}, this build reads version {CHECKPOINT_VERSION}"
                )))
            }
        }
        let file: CheckpointFile = serde_json::from_value(value)
            .map_err(|e| Error::Checkpoint(format!("version {CHECKPOINT_VERSION} layout: {e}")))?;
        file.model
            .validate()
            .map_err(|e| Error::Checkpoint(format!("model configuration: {e}")))?;
        let tensors = from_named(file.model, file.params, "params")?;
        let m = from_named(file.model, file.optimizer.m, "optimizer.m")?;
        let v = from_named(file.model, file.optimizer.v, "optimizer.v")?;
        if file.options != file.train.model_options() {
            return Err(Error::Checkpoint(
                "model options disagree with the training ablation flags".into(),
            ));
        }
        Ok(Trainer {
            model: Model::new(
                ModelParams {
                    config: file.model,
                    tensors,
                },
                file.options,
            ),
            optimizer: OptimizerState {
                step: file.optimizer.step,
                m,
                v,
            },
            config: file.train,
            score_mode: file.score_mode,
            epoch: file.epoch,
            history: file.history,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic, GeneratorConfig};

    fn trained() -> Trainer {
        let model = ModelConfig {
            coord_dim: 6,
            hidden_dim: 5,
            relation_categories: 2,
            modes: 2,
            blocks: 1,
            ..ModelConfig::default()
        };
        let data = generate_synthetic(
            &GeneratorConfig {
                scenes: 5,
                max_vehicles: 3,
                ..GeneratorConfig::default()
            },
            1,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        super::super::train(&data, model, config, ScoreMode::CoordinateMean).unwrap()
    }

    #[test]
    fn save_load_is_exact() {
        let t = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        t.save(&path).unwrap();
        assert_eq!(Trainer::load(&path).unwrap(), t);
        // No temporary file is left behind.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn wrong_version_is_reported() {
        let text = trained()
            .to_checkpoint_string()
            .replace("\"version\":1", "\"version\":7");
        let msg = Trainer::from_checkpoint_str(&text).unwrap_err().to_string();
        assert!(msg.contains("unsupported version Some(7)"), "{msg}");
    }

    #[test]
    fn corrupt_files_are_checkpoint_errors() {
        for text in ["", "{", "{\"format\":\"other\"}", "[1,2]"] {
            let err = Trainer::from_checkpoint_str(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        let t = trained();
        let text = t
            .to_checkpoint_string()
            .replacen("\"rows\":6", "\"rows\":7", 1);
        let msg = Trainer::from_checkpoint_str(&text).unwrap_err().to_string();
        assert!(msg.contains("init_g has shape 7x"), "{msg}");
    }

    #[test]
    fn shape_mismatch_with_config_is_explicit() {
        let t = trained();
        let text = t
            .to_checkpoint_string()
            .replace("\"coord_dim\":6", "\"coord_dim\":8");
        let msg = Trainer::from_checkpoint_str(&text).unwrap_err().to_string();
        assert!(msg.contains("model configuration needs"), "{msg}");
    }
}
