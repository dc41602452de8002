//! Mini-batch training with Adam and a step-decay learning rate.
//!
//! Determinism: every epoch's shuffle comes from its own ChaCha stream
//! keyed by `(seed, epoch)`, per-scene gradients are computed in parallel
//! but summed in batch order, so a run resumed from a checkpoint matches
//! an uninterrupted one bit for bit at any thread count.

mod checkpoint;
pub mod loss;
mod optim;

pub use checkpoint::{write_atomic, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{LossBreakdown, LossConfig, PlanTarget};
pub use optim::{LrSchedule, OptimizerState, BETA1, BETA2, EPSILON};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::ScoreMode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelOptions, ModelParams, Params};
use crate::scene::Dataset;
use crate::tensor::Tensor;

/// Optimization settings and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total epochs; a resumed run continues up to this count.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Factor applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Weight of the prediction loss.
    pub alpha: f64,
    /// Seeds both weight initialization and shuffling.
    pub seed: u64,
    pub prediction_loss: bool,
    pub route_attraction: bool,
    pub equivariant_init: bool,
    pub plan_target: PlanTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 512,
            lr0: 5e-4,
            lr_decay: 0.8,
            lr_decay_every: 2,
            alpha: 0.1,
            seed: 0,
            prediction_loss: true,
            route_attraction: true,
            equivariant_init: true,
            plan_target: PlanTarget::Selected,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size: must be positive".to_string());
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            bad.push(format!("lr0: must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            bad.push(format!("lr_decay: must be positive, got {}", self.lr_decay));
        }
        if self.lr_decay_every == 0 {
            bad.push("lr_decay_every: must be positive".to_string());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            bad.push(format!("alpha: must be non-negative, got {}", self.alpha));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            decay: self.lr_decay,
            every: self.lr_decay_every,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            route_attraction: self.route_attraction,
            equivariant_init: self.equivariant_init,
        }
    }
}

/// Per-epoch means over the training scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub plan: f64,
    pub wta: f64,
    pub pred: f64,
    pub l2_avg: f64,
    pub l2_3s: f64,
    pub selection_accuracy: f64,
}

/// Model, optimizer state and progress of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub score_mode: ScoreMode,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(
        model_config: ModelConfig,
        config: TrainConfig,
        score_mode: ScoreMode,
    ) -> Result<Self> {
        let params = ModelParams::init(model_config, config.seed)?;
        Self::from_params(params, config, score_mode)
    }

    pub fn from_params(
        params: ModelParams,
        config: TrainConfig,
        score_mode: ScoreMode,
    ) -> Result<Self> {
        config.validate()?;
        params.check_shapes()?;
        Ok(Self {
            optimizer: OptimizerState::new(&params.tensors),
            model: Model::new(params, config.model_options()),
            config,
            score_mode,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.config.alpha,
            prediction_loss: self.config.prediction_loss,
            plan_target: self.config.plan_target,
            score_mode: self.score_mode,
        }
    }

    /// Scene order for `epoch` (0-based).
    pub fn epoch_order(&self, epoch: usize, scenes: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..scenes).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs one epoch of shuffled mini-batches.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::validation("training set is empty"));
        }
        let lr = self.config.schedule().at(self.epoch);
        let order = self.epoch_order(self.epoch, data.len());
        let loss_config = self.loss_config();
        let mut seen = Vec::with_capacity(data.len());
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let model = &self.model;
            let results: Vec<Result<(LossBreakdown, Params<Tensor>)>> = batch
                .par_iter()
                .map(|&i| loss::scene_gradient(model, &data.scenes[i], &loss_config))
                .collect();
            let mut grad = self.model.params.tensors.zeros_like();
            for (&i, r) in batch.iter().zip(results) {
                let (breakdown, g) = r?;
                if !breakdown.total.is_finite() {
                    return Err(self.non_finite(&format!("loss of scene {i}"), Some(&g), b));
                }
                add_params(&mut grad, &g);
                seen.push(breakdown);
            }
            scale_params(&mut grad, 1.0 / batch.len() as f64);
            if let Some(name) = grad.first_non_finite() {
                return Err(self.non_finite(&format!("gradient of {name}"), None, b));
            }
            self.optimizer
                .update(&mut self.model.params.tensors, &grad, lr);
            if let Some(name) = self.model.params.tensors.first_non_finite() {
                return Err(Error::NonFinite(format!(
                    "parameter {name} after the update (epoch {}, batch {b})",
                    self.epoch + 1
                )));
            }
        }
        self.epoch += 1;
        let mean = LossBreakdown::mean(&seen);
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            loss: mean.total,
            plan: mean.plan,
            wta: mean.wta,
            pred: mean.pred,
            l2_avg: mean.l2_avg,
            l2_3s: mean.l2_3s,
            selection_accuracy: 1.0 - mean.selection_miss,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Names the first non-finite tensor: a parameter if any, else a
    /// gradient, else the quantity that overflowed.
    fn non_finite(&self, what: &str, grad: Option<&Params<Tensor>>, batch: usize) -> Error {
        let culprit = self
            .model
            .params
            .tensors
            .first_non_finite()
            .map(|n| format!("parameter {n}"))
            .or_else(|| {
                grad.and_then(|g| g.first_non_finite())
                    .map(|n| format!("gradient of {n}"))
            })
            .unwrap_or_else(|| what.to_string());
        Error::NonFinite(format!(
            "{culprit} (epoch {}, batch {batch}; detected in {what})",
            self.epoch + 1
        ))
    }

    /// Trains until `config.epochs` epochs are complete, calling
    /// `on_epoch` after each.
    pub fn fit(
        &mut self,
        data: &Dataset,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        if self.epoch < self.config.epochs && data.is_empty() {
            return Err(Error::validation("training set is empty"));
        }
        while self.epoch < self.config.epochs {
            let record = self.run_epoch(data)?;
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    /// History as CSV; a leading comment records the switches in effect.
    pub fn history_csv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# prediction_loss={} route_attraction={} equivariant_init={} plan_target={} score_mode={} seed={}\n",
            c.prediction_loss,
            c.route_attraction,
            c.equivariant_init,
            enum_name(&c.plan_target),
            enum_name(&self.score_mode),
            c.seed,
        );
        out.push_str("epoch,lr,loss,plan,wta,pred,l2_avg,l2_3s,selection_accuracy\n");
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.loss,
                r.plan,
                r.wta,
                r.pred,
                r.l2_avg,
                r.l2_3s,
                r.selection_accuracy
            );
        }
        out
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn add_params(acc: &mut Params<Tensor>, g: &Params<Tensor>) {
    for (a, b) in acc.leaves_mut().into_iter().zip(g.leaves()) {
        a.add_assign(b);
    }
}

fn scale_params(p: &mut Params<Tensor>, factor: f64) {
    for t in p.leaves_mut() {
        t.scale_in_place(factor);
    }
}

/// Trains a fresh model on `data`.
pub fn train(
    data: &Dataset,
    model_config: ModelConfig,
    config: TrainConfig,
    score_mode: ScoreMode,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(model_config, config, score_mode)?;
    trainer.fit(data, |_, _| Ok(()))?;
    Ok(trainer)
}
