//! Editor training objectives: the weighted per-point loss and its
//! sequential sum with stop-gradient between steps.

mod train;

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{LabelPolicy, Task, TokenSeq};
use crate::editor::{EditRequest, EditorNetwork, MatrixDelta};
use crate::error::{Error, Result};
use crate::model::{Example, GradMap, TaskModel, Trainable};
use crate::tensor::Mat;

pub use train::{
    selection_score, train_editor, tune_baseline, BaselineCell, BaselineTuning, EditorEpochLog, EditorTrainConfig,
    EditorTrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Main,
    Paraphrase,
    Entailed,
    LocalNeutral,
    KlRandom,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Main, Term::Paraphrase, Term::Entailed, Term::LocalNeutral, Term::KlRandom];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermWeights {
    pub main: f64,
    pub paraphrase: f64,
    pub entailed: f64,
    pub local_neutral: f64,
    pub kl_random: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self { main: 1.0, paraphrase: 1.0, entailed: 1.0, local_neutral: 1.0, kl_random: 1.0 }
    }
}

impl TermWeights {
    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Main => self.main,
            Term::Paraphrase => self.paraphrase,
            Term::Entailed => self.entailed,
            Term::LocalNeutral => self.local_neutral,
            Term::KlRandom => self.kl_random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub weights: TermWeights,
    pub enabled_terms: BTreeSet<Term>,
    pub r_train: usize,
    pub k_train: usize,
    pub label_policy: LabelPolicy,
    pub oversample_entailment: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: TermWeights::default(),
            enabled_terms: Term::ALL.into_iter().collect(),
            r_train: 1,
            k_train: 1,
            label_policy: LabelPolicy::Hard,
            oversample_entailment: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for t in Term::ALL {
            let w = self.weights.get(t);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config("weights", format!("{t:?} weight {w} must be non-negative")));
            }
        }
        for t in [Term::Main, Term::KlRandom] {
            if !self.enabled_terms.contains(&t) {
                return Err(Error::config("enabled_terms", format!("{t:?} cannot be disabled")));
            }
        }
        if self.r_train == 0 {
            return Err(Error::config("r_train", "must be at least 1"));
        }
        if self.k_train == 0 {
            return Err(Error::config("k_train", "must be at least 1"));
        }
        Ok(())
    }

    /// Zero for disabled terms.
    pub fn weight(&self, t: Term) -> f64 {
        if self.enabled_terms.contains(&t) {
            self.weights.get(t)
        } else {
            0.0
        }
    }
}

/// Auxiliary data for one updated point. Empty sets contribute nothing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxData {
    /// Scored against the request's `y*`.
    pub paraphrases: Vec<TokenSeq>,
    /// `(input, label)` pairs scored against their own labels.
    pub entailed: Vec<(TokenSeq, TokenSeq)>,
    pub local_neutral: Vec<TokenSeq>,
    pub random: Vec<TokenSeq>,
}

/// Unweighted term values. `None` marks a term with no data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub main: f64,
    pub paraphrase: Option<f64>,
    pub entailed: Option<f64>,
    pub local_neutral: Option<f64>,
    pub kl_random: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PointLoss {
    pub value: f64,
    pub terms: TermValues,
    /// Gradient with respect to every editor parameter, in parameter order.
    pub grads: GradMap,
    /// The updated task model `θ*`.
    pub post: TaskModel,
}

/// An input whose post-update distribution is pulled toward a fixed one.
struct KlTarget {
    example: Example,
    log_q: Mat,
}

fn kl_targets(model: &TaskModel, inputs: &[TokenSeq]) -> Result<Vec<KlTarget>> {
    inputs
        .iter()
        .map(|x| {
            let ids = model.encode_input(x)?;
            // Seq2seq distributions are compared along the model's own greedy output.
            let label = match model.task() {
                Task::Binary => vec![0],
                Task::Seq2seq => model.greedy_ids(&ids),
            };
            let example = Example { input: ids, label };
            let mut tape = Tape::no_grad();
            let b = model.bind(&mut tape, Trainable::Nothing);
            let logits = model.logits(&mut tape, &b, &example);
            let log_q = tape.value(logits).log_softmax_rows();
            Ok(KlTarget { example, log_q })
        })
        .collect()
}

/// Accumulates `weight · mean(terms)` into a running sum on the tape.
struct Objective<'t> {
    tape: &'t mut Tape,
    total: Option<Var>,
}

impl Objective<'_> {
    fn add_mean(&mut self, parts: Vec<Var>, weight: f64) -> Option<f64> {
        if parts.is_empty() {
            return None;
        }
        let mut sum = parts[0];
        for &p in &parts[1..] {
            sum = self.tape.add(sum, p);
        }
        let mean = self.tape.scale(sum, 1.0 / parts.len() as f64);
        let value = self.tape.value(mean).item();
        let weighted = self.tape.scale(mean, weight);
        self.total = Some(match self.total {
            Some(t) => self.tape.add(t, weighted),
            None => weighted,
        });
        Some(value)
    }
}

/// Runs the `K` editor steps from `model` and scores `θ*`.
///
/// The φ-gradient is exact for one step. With more steps, the task gradients
/// recomputed along the way are treated as constants.
pub fn per_point_loss(
    editor: &EditorNetwork,
    model: &TaskModel,
    req: &EditRequest,
    aux: &AuxData,
    cfg: &ObjectiveConfig,
) -> Result<PointLoss> {
    cfg.validate()?;
    editor.check_compatible(model)?;
    let w = |t| cfg.weight(t);
    let ln_targets = if w(Term::LocalNeutral) > 0.0 { kl_targets(model, &aux.local_neutral)? } else { Vec::new() };
    if w(Term::KlRandom) > 0.0 && aux.random.is_empty() {
        warn!("no random inputs for the KL term; it contributes 0");
    }
    let random_targets = if w(Term::KlRandom) > 0.0 { kl_targets(model, &aux.random)? } else { Vec::new() };

    let cond = editor.conditioning_ids(req)?;
    let mut etape = Tape::new();
    let eb = editor.bind(&mut etape, true);
    let factors = editor.factor_vars(&mut etape, &eb, &cond);
    let view = model.view().entries();
    let deltas: Vec<MatrixDelta> = factors
        .iter()
        .map(|f| MatrixDelta { a: etape.value(f.a).clone(), b: etape.value(f.b).clone(), eta: etape.value(f.eta).item() })
        .collect();

    let mut post = model.clone();
    let mut grad_sums: Vec<Mat> = view.iter().map(|e| Mat::zeros(e.shape.0, e.shape.1)).collect();
    for _ in 0..cfg.k_train {
        let (_, grads) = post.loss_and_gradients(&req.input, &req.desired)?;
        for ((e, d), sum) in view.iter().zip(&deltas).zip(&mut grad_sums) {
            let g = &grads[&e.name];
            sum.add_assign(g);
            let mut m = post.params().get(&e.name).expect("view name").clone();
            m.add_assign(&d.step(g));
            if !m.all_finite() {
                return Err(Error::NonFinite(e.name.clone()));
            }
            post.set_editable(&e.name, m)?;
        }
    }

    let mut ttape = Tape::new();
    let tb = post.bind(&mut ttape, Trainable::Editable);
    let mut obj = Objective { tape: &mut ttape, total: None };
    let ce = |obj: &mut Objective<'_>, x: &TokenSeq, y: &TokenSeq| -> Result<Var> {
        let ex = post.example(x, y)?;
        let logits = post.logits(&mut *obj.tape, &tb, &ex);
        Ok(obj.tape.cross_entropy(logits, &post.ce_targets(&ex.label)))
    };
    let main = ce(&mut obj, &req.input, &req.desired)?;
    let main_value = obj.add_mean(vec![main], w(Term::Main)).expect("one part");
    let mut terms = TermValues { main: main_value, ..TermValues::default() };
    if w(Term::Paraphrase) > 0.0 {
        let parts = aux.paraphrases.iter().map(|p| ce(&mut obj, p, &req.desired)).collect::<Result<Vec<_>>>()?;
        terms.paraphrase = obj.add_mean(parts, w(Term::Paraphrase));
    }
    if w(Term::Entailed) > 0.0 {
        let parts = aux.entailed.iter().map(|(x, y)| ce(&mut obj, x, y)).collect::<Result<Vec<_>>>()?;
        terms.entailed = obj.add_mean(parts, w(Term::Entailed));
    }
    let kl = |obj: &mut Objective<'_>, targets: &[KlTarget]| -> Vec<Var> {
        targets
            .iter()
            .map(|t| {
                let logits = post.logits(&mut *obj.tape, &tb, &t.example);
                obj.tape.kl_to_const(logits, &t.log_q)
            })
            .collect()
    };
    let parts = kl(&mut obj, &ln_targets);
    terms.local_neutral = obj.add_mean(parts, w(Term::LocalNeutral));
    let parts = kl(&mut obj, &random_targets);
    terms.kl_random = obj.add_mean(parts, w(Term::KlRandom));
    let total = obj.total.expect("main term is always present");
    let value = ttape.value(total).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("editor objective {value}")));
    }
    let mut tgrads = ttape.backward(total);

    // dL/dφ through θ* = θ + η (A ∘ ΣG + K·B), with ΣG and dL/dθ* held fixed.
    let k = cfg.k_train as f64;
    let mut surrogate: Option<Var> = None;
    for ((e, f), gsum) in view.iter().zip(&factors).zip(grad_sums) {
        let Some(c) = tgrads.take(tb.var(&e.name)) else { continue };
        let g = etape.constant(gsum);
        let ag = etape.mul(f.a, g);
        let kb = etape.scale(f.b, k);
        let step = etape.add(ag, kb);
        let step = etape.mul_scalar(step, f.eta);
        let c = etape.constant(c);
        let s = etape.mul(step, c);
        let s = etape.sum(s);
        surrogate = Some(match surrogate {
            Some(acc) => etape.add(acc, s),
            None => s,
        });
    }
    let mut egrads = surrogate.map(|s| etape.backward(s));
    let grads = editor
        .params()
        .iter()
        .map(|(name, m)| {
            let g = egrads.as_mut().and_then(|g| g.take(eb.var(name))).unwrap_or_else(|| Mat::zeros(m.rows(), m.cols()));
            (name.clone(), g)
        })
        .collect();
    Ok(PointLoss { value, terms, grads, post })
}

/// One step of a sequence: its request and auxiliary data.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceStep {
    pub req: EditRequest,
    pub aux: AuxData,
}

#[derive(Debug, Clone)]
pub struct SequenceLoss {
    /// Sum of the per-step losses.
    pub value: f64,
    pub step_values: Vec<f64>,
    /// Sum of the per-step φ-gradients.
    pub grads: GradMap,
    /// The task model after the last step.
    pub post: TaskModel,
}

/// Sums per-point losses along `r` consecutive updates. `next` supplies step
/// `i`'s request from the running model. Each step's gradient is taken with
/// its entering parameters held constant and accumulated before the next
/// step runs, so only one step's graph is alive at a time.
pub fn sequential_loss_with<F>(
    editor: &EditorNetwork,
    model: &TaskModel,
    r: usize,
    cfg: &ObjectiveConfig,
    mut next: F,
) -> Result<SequenceLoss>
where
    F: FnMut(usize, &TaskModel) -> Result<SequenceStep>,
{
    if r == 0 {
        return Err(Error::config("r_train", "must be at least 1"));
    }
    let at = |step: usize| move |e: Error| Error::Step { step, source: Box::new(e) };
    let mut current = model.clone();
    let mut grads: Option<GradMap> = None;
    let mut step_values = Vec::with_capacity(r);
    for i in 0..r {
        let step = next(i, &current).map_err(at(i))?;
        let point = per_point_loss(editor, &current, &step.req, &step.aux, cfg).map_err(at(i))?;
        step_values.push(point.value);
        match &mut grads {
            None => grads = Some(point.grads),
            Some(acc) => {
                for (name, g) in acc.iter_mut() {
                    g.add_assign(&point.grads[name]);
                }
            }
        }
        current = point.post;
    }
    Ok(SequenceLoss {
        value: step_values.iter().sum(),
        step_values,
        grads: grads.expect("r >= 1"),
        post: current,
    })
}

/// [`sequential_loss_with`] over a fixed list of steps.
pub fn sequential_loss(
    editor: &EditorNetwork,
    model: &TaskModel,
    steps: &[SequenceStep],
    cfg: &ObjectiveConfig,
) -> Result<SequenceLoss> {
    sequential_loss_with(editor, model, steps.len(), cfg, |i, _| Ok(steps[i].clone()))
}
