//! Model and updater abstractions shared by evaluation and graph building.

use crate::data::{Task, TokenSeq};
use crate::editor::{apply_update, baseline_update, BaselineSpec, EditRequest, EditorNetwork};
use crate::error::Result;
use crate::model::TaskModel;

/// A predictor whose beliefs can be probed and updated.
pub trait BeliefModel: Clone {
    fn task(&self) -> Task;

    fn predict_label(&self, input: &TokenSeq) -> Result<TokenSeq>;

    /// Ranked alternative outputs. The first entry is the prediction.
    fn beam_labels(&self, input: &TokenSeq) -> Result<Vec<TokenSeq>>;

    /// Exact state equality, used to check rollbacks.
    fn same_state(&self, other: &Self) -> bool;
}

impl BeliefModel for TaskModel {
    fn task(&self) -> Task {
        TaskModel::task(self)
    }

    fn predict_label(&self, input: &TokenSeq) -> Result<TokenSeq> {
        TaskModel::predict_label(self, input)
    }

    fn beam_labels(&self, input: &TokenSeq) -> Result<Vec<TokenSeq>> {
        match TaskModel::task(self) {
            Task::Binary => {
                let first = TaskModel::predict_label(self, input)?;
                let other = TokenSeq::binary(first.as_bool() != Some(true));
                Ok(vec![first, other])
            }
            Task::Seq2seq => {
                Ok(self.beam_search(input, self.config().beam_width)?.into_iter().map(|c| c.label).collect())
            }
        }
    }

    fn same_state(&self, other: &Self) -> bool {
        self.params().bitwise_eq(other.params())
    }
}

pub trait Updater<M: BeliefModel> {
    fn name(&self) -> String;

    fn check_compatible(&self, _model: &M) -> Result<()> {
        Ok(())
    }

    /// A fresh model with the update applied. `model` is never mutated.
    fn update(&self, model: &M, req: &EditRequest) -> Result<M>;
}

/// Returns the model unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoOpUpdater;

impl<M: BeliefModel> Updater<M> for NoOpUpdater {
    fn name(&self) -> String {
        "noop".into()
    }

    fn update(&self, model: &M, _req: &EditRequest) -> Result<M> {
        Ok(model.clone())
    }
}

#[derive(Debug, Clone)]
pub struct EditorUpdater {
    pub editor: EditorNetwork,
    pub k: usize,
}

impl Updater<TaskModel> for EditorUpdater {
    fn name(&self) -> String {
        format!("editor K={}", self.k)
    }

    fn check_compatible(&self, model: &TaskModel) -> Result<()> {
        self.editor.check_compatible(model)
    }

    fn update(&self, model: &TaskModel, req: &EditRequest) -> Result<TaskModel> {
        apply_update(model, &self.editor, req, self.k)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineUpdater {
    pub spec: BaselineSpec,
}

impl Updater<TaskModel> for BaselineUpdater {
    fn name(&self) -> String {
        format!("baseline {}", self.spec)
    }

    fn update(&self, model: &TaskModel, req: &EditRequest) -> Result<TaskModel> {
        Ok(baseline_update(model, req, &self.spec)?.model)
    }
}
