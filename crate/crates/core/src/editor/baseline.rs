use serde::{Deserialize, Serialize};

use super::EditRequest;
use crate::error::{Error, Result};
use crate::model::{TaskModel, Trainable};
use crate::optim::{Optimizer, OptimizerKind, OptimizerSpec};

/// An off-the-shelf optimizer run toward `y*` for at most `max_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub optimizer: OptimizerSpec,
    pub max_steps: usize,
}

impl BaselineSpec {
    pub fn new(kind: OptimizerKind, lr: f64, max_steps: usize) -> Self {
        Self { optimizer: OptimizerSpec::new(kind, lr), max_steps }
    }
}

impl std::fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {:e} {}", self.optimizer.kind, self.optimizer.lr, self.max_steps)
    }
}

/// The 27-cell tuning grid: three optimizers, three learning rates each, three step budgets.
pub fn baseline_grid() -> Vec<BaselineSpec> {
    let mut grid = Vec::with_capacity(27);
    for kind in [OptimizerKind::AdamW, OptimizerKind::Sgd, OptimizerKind::RmsProp] {
        let lrs = match kind {
            OptimizerKind::Sgd => [1e-1, 1e-2, 1e-3],
            _ => [1e-4, 1e-5, 1e-6],
        };
        for lr in lrs {
            for steps in [5, 10, 100] {
                grid.push(BaselineSpec::new(kind, lr, steps));
            }
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub model: TaskModel,
    pub steps: usize,
    pub flipped: bool,
}

/// Optimizes every trainable parameter on the cross entropy toward `y*`,
/// stopping as soon as the prediction equals it.
pub fn baseline_update(model: &TaskModel, req: &EditRequest, spec: &BaselineSpec) -> Result<BaselineOutcome> {
    let example = model.example(&req.input, &req.desired)?;
    let mut out = model.clone();
    let mut opt = Optimizer::new(spec.optimizer);
    let mut steps = 0;
    loop {
        if out.predict_label(&req.input)? == req.desired {
            return Ok(BaselineOutcome { model: out, steps, flipped: true });
        }
        if steps == spec.max_steps {
            return Ok(BaselineOutcome { model: out, steps, flipped: false });
        }
        let (loss, grads) = out.example_loss_and_gradients(&example, Trainable::All)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("baseline loss at step {steps}")));
        }
        opt.step(out.params_mut(), &grads)?;
        steps += 1;
    }
}
