use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, GradMap, ModelConfig, TaskModel, Trainable, Vocab};
use crate::data::{BeliefStore, Task};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind, OptimizerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    /// Defaults to 10 for binary tasks and 20 for seq2seq.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    pub train_on_paraphrases: bool,
    pub train_on_entailed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: None,
            batch_size: 16,
            grad_clip: Some(1.0),
            train_on_paraphrases: true,
            train_on_entailed: true,
        }
    }
}

impl TrainConfig {
    pub fn epochs_for(&self, task: Task) -> usize {
        self.epochs.unwrap_or(match task {
            Task::Binary => 10,
            Task::Seq2seq => 20,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("grad_clip", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TaskModel,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub history: Vec<EpochLog>,
}

fn examples(model: &TaskModel, store: &BeliefStore, cfg: &TrainConfig) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for r in store.records() {
        let y = r.canonical_label();
        out.push(model.example(&r.main_input, y)?);
        if cfg.train_on_paraphrases {
            for p in &r.paraphrases {
                out.push(model.example(p, y)?);
            }
        }
        if cfg.train_on_entailed {
            for e in &r.entailed {
                out.push(model.example(&e.input, &e.label)?);
            }
        }
    }
    Ok(out)
}

impl TaskModel {
    /// Fraction of records whose main-input prediction is a gold label.
    pub fn accuracy(&self, store: &BeliefStore) -> Result<f64> {
        if store.is_empty() {
            return Err(Error::Empty("accuracy over an empty store".into()));
        }
        let mut correct = 0usize;
        for r in store.records() {
            if r.is_correct(&self.predict_label(&r.main_input)?) {
                correct += 1;
            }
        }
        Ok(correct as f64 / store.len() as f64)
    }
}

/// Trains a fresh model on `train`, returning the epoch checkpoint with the
/// best `dev` accuracy (earliest on ties). `vocab` must cover every store the
/// model will later see.
pub fn train_task_model(
    train: &BeliefStore,
    dev: &BeliefStore,
    vocab: &Vocab,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task = train.task().ok_or_else(|| Error::Empty("training store has no records".into()))?;
    if dev.task().is_some_and(|t| t != task) {
        return Err(Error::Validation("dev store task differs from training store".into()));
    }
    let mut model = TaskModel::new(task, vocab.clone(), cfg.model.clone(), seed)?;
    let mut data = examples(&model, train, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = Optimizer::new(OptimizerSpec::new(OptimizerKind::AdamW, cfg.lr).with_weight_decay(cfg.weight_decay));
    let epochs = cfg.epochs_for(task);

    let mut best: Option<(f64, usize, TaskModel)> = None;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        data.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in data.chunks(cfg.batch_size).enumerate() {
            let mut acc: Option<GradMap> = None;
            for ex in batch {
                let (loss, grads) = model.example_loss_and_gradients(ex, Trainable::All).map_err(|e| {
                    Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}"))
                })?;
                total += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.values_mut().zip(grads.values()).for_each(|(x, g)| x.add_assign(g)),
                }
            }
            let mut grads = acc.expect("chunks are non-empty");
            let inv = 1.0 / batch.len() as f64;
            grads.values_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            opt.step(model.params_mut(), &grads)?;
        }
        model.params().check_finite()?;
        let train_loss = total / data.len() as f64;
        let dev_accuracy = if dev.is_empty() { 0.0 } else { model.accuracy(dev)? };
        info!("train-task epoch {epoch}: loss {train_loss:.4}, dev accuracy {dev_accuracy:.4}");
        history.push(EpochLog { epoch, train_loss, dev_accuracy });
        if best.as_ref().is_none_or(|(acc, _, _)| dev_accuracy > *acc) || dev.is_empty() {
            best = Some((dev_accuracy, epoch, model.clone()));
        }
    }
    let (best_dev_accuracy, best_epoch, model) = best.ok_or_else(|| Error::config("epochs", "must be positive"))?;
    Ok(TrainOutcome { model, best_epoch, best_dev_accuracy, history })
}
