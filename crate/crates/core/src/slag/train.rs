use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sequential_loss_with, AuxData, ObjectiveConfig, SequenceStep};
use crate::data::{draw_update_label, BeliefRecord, BeliefStore, LabelPolicy, Task, TokenSeq};
use crate::editor::{BaselineSpec, EditRequest, EditorConfig, EditorNetwork};
use crate::error::{Error, Result};
use crate::eval::{evaluate_single_updates, EvalConfig, UpdateSummary};
use crate::model::TaskModel;
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind, OptimizerSpec};
use crate::update::{BaselineUpdater, BeliefModel, EditorUpdater};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorTrainConfig {
    pub editor: EditorConfig,
    pub objective: ObjectiveConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Records per outer step: `r_train` main inputs, the rest random inputs.
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    /// Dev evaluation used for checkpoint selection.
    pub dev_eval: EvalConfig,
    /// Inner steps at dev evaluation. Defaults to `k_train`.
    pub k_test: Option<usize>,
}

impl Default for EditorTrainConfig {
    fn default() -> Self {
        Self {
            editor: EditorConfig::default(),
            objective: ObjectiveConfig::default(),
            lr: 3e-4,
            weight_decay: 0.0,
            epochs: 5,
            batch_size: 16,
            grad_clip: Some(1.0),
            dev_eval: EvalConfig::default(),
            k_test: None,
        }
    }
}

impl EditorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.editor.validate()?;
        self.objective.validate()?;
        self.dev_eval.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < self.objective.r_train {
            return Err(Error::config("batch_size", "must be at least r_train"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("grad_clip", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn k_test(&self) -> usize {
        self.k_test.unwrap_or(self.objective.k_train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorEpochLog {
    pub epoch: usize,
    pub outer_steps: usize,
    /// Mean sequence loss per outer step.
    pub train_loss: f64,
    pub dev: UpdateSummary,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct EditorTrainOutcome {
    pub editor: EditorNetwork,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<EditorEpochLog>,
}

/// Mean of the average update success, the retain rate (local neutral when
/// present, otherwise all data) and Δ-Acc.
pub fn selection_score(s: &UpdateSummary) -> Option<f64> {
    let retain = s.retain_local_neutral.or(s.retain_all);
    let parts: Vec<f64> = [s.average_success(), retain, s.delta_acc].into_iter().flatten().collect();
    (!parts.is_empty()).then(|| parts.iter().sum::<f64>() / parts.len() as f64)
}

/// Builds one step's request toward a label drawn from the running model.
fn make_step(
    record: &BeliefRecord,
    current: &TaskModel,
    policy: LabelPolicy,
    store: &BeliefStore,
    random: &[TokenSeq],
    rng: &mut ChaCha8Rng,
) -> Result<SequenceStep> {
    let pred = current.predict_label(&record.main_input)?;
    let beam = match policy {
        LabelPolicy::Beam => Some(current.beam_labels(&record.main_input)?),
        LabelPolicy::Hard => None,
    };
    let desired = draw_update_label(record, &pred, policy, store.label_vocabulary(), rng, beam.as_deref())?;
    let desired_true = desired.as_bool() == Some(true);
    let aux = AuxData {
        paraphrases: record.paraphrases.clone(),
        entailed: record
            .entailed
            .iter()
            .filter(|e| !e.holds_only_if_main_true || desired_true)
            .map(|e| (e.input.clone(), e.label.clone()))
            .collect(),
        local_neutral: record.local_neutral.iter().map(|n| n.input.clone()).collect(),
        random: random.to_vec(),
    };
    Ok(SequenceStep { req: EditRequest::new(record.main_input.clone(), pred, desired)?, aux })
}

/// Trains an editor for the frozen `model`, returning the epoch checkpoint
/// with the best dev selection score (earliest on ties).
pub fn train_editor(
    model: &TaskModel,
    train: &BeliefStore,
    dev: &BeliefStore,
    cfg: &EditorTrainConfig,
    seed: u64,
) -> Result<EditorTrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Empty("editor training needs non-empty train and dev stores".into()));
    }
    let obj = &cfg.objective;
    let mut editor = EditorNetwork::new(model, cfg.editor.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ed17);
    let mut opt = Optimizer::new(OptimizerSpec::new(OptimizerKind::AdamW, cfg.lr).with_weight_decay(cfg.weight_decay));
    let records = train.records();
    let fold_entailed = train.task() == Some(Task::Binary) && train.has_entailed();

    let mut base_order: Vec<usize> = (0..records.len()).collect();
    if obj.oversample_entailment {
        for (i, r) in records.iter().enumerate() {
            let false_to_true = r.canonical_label().as_bool() == Some(true)
                && model.predict_label(&r.main_input)?.as_bool() == Some(false);
            if false_to_true {
                base_order.push(i);
            }
        }
    }

    let mut best: Option<(f64, usize, EditorNetwork)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = base_order.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut outer_steps) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < obj.r_train {
                continue;
            }
            let mut batch = batch.to_vec();
            batch.shuffle(&mut rng);
            let (mains, rest) = batch.split_at(obj.r_train);
            let mut random: Vec<TokenSeq> = Vec::new();
            for &j in rest {
                random.push(records[j].main_input.clone());
                if fold_entailed {
                    random.extend(records[j].entailed.iter().map(|e| e.input.clone()));
                }
            }
            let seq = sequential_loss_with(&editor, model, obj.r_train, obj, |i, current| {
                make_step(&records[mains[i]], current, obj.label_policy, train, &random, &mut rng)
            })?;
            let mut grads = seq.grads;
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            opt.step(editor.params_mut(), &grads)?;
            loss_sum += seq.value;
            outer_steps += 1;
        }
        let updater = EditorUpdater { editor: editor.clone(), k: cfg.k_test() };
        let dev_res = evaluate_single_updates(model, &updater, dev, &cfg.dev_eval)?;
        let score = selection_score(&dev_res.summary)
            .ok_or_else(|| Error::UndefinedMetric("dev selection score has no defined parts".into()))?;
        let train_loss = if outer_steps > 0 { loss_sum / outer_steps as f64 } else { 0.0 };
        info!("editor epoch {epoch}: loss {train_loss:.4}, dev score {score:.4}");
        history.push(EditorEpochLog { epoch, outer_steps, train_loss, dev: dev_res.summary, score });
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, editor.clone()));
        }
    }
    let (best_score, best_epoch, editor) = best.expect("at least one epoch");
    Ok(EditorTrainOutcome { editor, best_epoch, best_score, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub spec: BaselineSpec,
    pub dev: UpdateSummary,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTuning {
    pub best: BaselineSpec,
    pub cells: Vec<BaselineCell>,
}

/// Evaluates every grid cell on `dev` with single updates and keeps the
/// best selection score (earliest cell on ties).
pub fn tune_baseline(model: &TaskModel, dev: &BeliefStore, grid: &[BaselineSpec], eval: &EvalConfig) -> Result<BaselineTuning> {
    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, BaselineSpec)> = None;
    for &spec in grid {
        let res = evaluate_single_updates(model, &BaselineUpdater { spec }, dev, eval)?;
        let score = selection_score(&res.summary)
            .ok_or_else(|| Error::UndefinedMetric("dev selection score has no defined parts".into()))?;
        info!("baseline {spec}: dev score {score:.4}");
        // Equal dev scores mean early stopping never used the extra steps, so
        // the larger budget costs nothing and only helps harder inputs.
        if best.is_none_or(|(s, b)| score > s || (score == s && spec.max_steps > b.max_steps)) {
            best = Some((score, spec));
        }
        cells.push(BaselineCell { spec, dev: res.summary, score });
    }
    let (_, best) = best.ok_or_else(|| Error::Empty("baseline grid is empty".into()))?;
    Ok(BaselineTuning { best, cells })
}
