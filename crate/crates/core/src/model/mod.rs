//! Small transformer task models with a named view of their editable weights.

mod decode;
pub mod params;
mod train;
pub mod transformer;
pub mod vocab;

use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint;
use crate::data::{Task, TokenSeq};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub use decode::BeamCandidate;
pub use params::{GradMap, ParameterView, Params, ViewEntry};
pub use train::{train_task_model, TrainConfig, TrainOutcome};
pub use transformer::{Bound, Forward};
pub use vocab::{Vocab, BOS, EOS, NUM_SPECIAL, SEP};

/// Binary class index of `True`. Ties between classes resolve to it.
pub const TRUE_CLASS: usize = 0;
pub const FALSE_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_encoder_layers: usize,
    /// Ignored by binary models.
    pub n_decoder_layers: usize,
    pub max_positions: usize,
    /// Output tokens before a hypothesis is forced to end.
    pub max_decode_len: usize,
    pub beam_width: usize,
    pub embedding_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            max_positions: 16,
            max_decode_len: 4,
            beam_width: 5,
            embedding_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_encoder_layers", self.n_encoder_layers),
            ("max_positions", self.max_positions),
            ("max_decode_len", self.max_decode_len),
            ("beam_width", self.beam_width),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config("n_heads", "must divide d_model"));
        }
        if self.max_decode_len + 1 > self.max_positions {
            return Err(Error::config("max_decode_len", "must be below max_positions"));
        }
        if !(self.embedding_std.is_finite() && self.embedding_std > 0.0) {
            return Err(Error::config("embedding_std", "must be positive"));
        }
        Ok(())
    }
}

/// Which parameters become trainable leaves on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Editable,
    All,
}

/// Per-class probabilities (binary) or per-position token distributions
/// along the predicted sequence, the final row being the end-of-sequence step.
#[derive(Debug, Clone, PartialEq)]
pub enum Score {
    Classes(Vec<f64>),
    Tokens(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: TokenSeq,
    pub score: Score,
    /// Ranked candidates, seq2seq only.
    pub beam: Option<Vec<BeamCandidate>>,
}

/// An input and label already mapped to ids. Binary labels hold the class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<usize>,
    pub label: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    task: Task,
    config: ModelConfig,
    vocab: Arc<Vocab>,
    params: Params,
    view: ParameterView,
}

impl TaskModel {
    pub fn new(task: Task, vocab: Vocab, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, editable) = transformer::init_params(task, vocab.len(), &config, &mut rng);
        let entries = params
            .iter()
            .zip(&editable)
            .filter(|(_, e)| **e)
            .map(|((name, m), _)| ViewEntry { name: name.clone(), shape: m.shape() })
            .collect();
        let view = ParameterView::new(entries)?;
        Ok(Self { task, config, vocab: Arc::new(vocab), params, view })
    }

    /// Same architecture with a replacement parameter collection, which must
    /// match names and shapes exactly.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Manifest(format!("expected {} parameters, got {}", self.params.len(), params.len())));
        }
        for ((a, ma), (b, mb)) in self.params.iter().zip(params.iter()) {
            if a != b {
                return Err(Error::Manifest(format!("expected parameter `{a}`, found `{b}`")));
            }
            if ma.shape() != mb.shape() {
                return Err(Error::Shape { name: a.clone(), expected: ma.shape(), got: mb.shape() });
            }
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn view(&self) -> &ParameterView {
        &self.view
    }

    /// Replaces one editable matrix.
    pub fn set_editable(&mut self, name: &str, value: Mat) -> Result<()> {
        let entry = self
            .view
            .entries()
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Manifest(format!("`{name}` is not an editable matrix")))?;
        if entry.shape != value.shape() {
            return Err(Error::Shape { name: name.to_string(), expected: entry.shape, got: value.shape() });
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        *self.params.get_mut(name).expect("view entries are parameters") = value;
        Ok(())
    }

    pub fn encode_input(&self, input: &TokenSeq) -> Result<Vec<usize>> {
        let ids = self.vocab.encode(input)?;
        if ids.is_empty() {
            return Err(Error::Invalid("empty input".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::Invalid(format!(
                "input of {} tokens exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        Ok(ids)
    }

    pub fn encode_label(&self, label: &TokenSeq) -> Result<Vec<usize>> {
        match self.task {
            Task::Binary => match label.as_bool() {
                Some(true) => Ok(vec![TRUE_CLASS]),
                Some(false) => Ok(vec![FALSE_CLASS]),
                None => Err(Error::Invalid(format!("`{label}` is not a binary label"))),
            },
            Task::Seq2seq => {
                let ids = self.vocab.encode(label)?;
                if ids.len() + 1 > self.config.max_positions {
                    return Err(Error::Invalid(format!("label `{label}` is too long")));
                }
                if let Some(&s) = ids.iter().find(|&&i| Vocab::is_special(i)) {
                    return Err(Error::Invalid(format!("label contains reserved token `{}`", self.vocab.token(s))));
                }
                Ok(ids)
            }
        }
    }

    pub fn decode_label(&self, label: &[usize]) -> TokenSeq {
        match self.task {
            Task::Binary => TokenSeq::binary(label.first() == Some(&TRUE_CLASS)),
            Task::Seq2seq => self.vocab.decode(label),
        }
    }

    pub fn example(&self, input: &TokenSeq, label: &TokenSeq) -> Result<Example> {
        Ok(Example { input: self.encode_input(input)?, label: self.encode_label(label)? })
    }

    /// Cross-entropy targets, one per logit row of [`TaskModel::logits`].
    pub fn ce_targets(&self, label: &[usize]) -> Vec<usize> {
        match self.task {
            Task::Binary => label.to_vec(),
            Task::Seq2seq => label.iter().copied().chain([EOS]).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, which: Trainable) -> Bound {
        let vars: IndexMap<String, Var> = self
            .params
            .names()
            .map(|name| {
                let arc = self.params.arc(name).expect("name from params").clone();
                let trainable = match which {
                    Trainable::Nothing => false,
                    Trainable::Editable => self.view.contains(name),
                    Trainable::All => true,
                };
                let v = if trainable { tape.param(arc) } else { tape.constant_arc(arc) };
                (name.clone(), v)
            })
            .collect();
        Bound::new(vars)
    }

    /// Logits for `label` given `input` under teacher forcing: `1 x 2` for
    /// binary models, `(len(label) + 1) x vocab` for seq2seq.
    pub fn logits(&self, tape: &mut Tape, bound: &Bound, ex: &Example) -> Var {
        let mut f = Forward { tape, bound, cfg: &self.config };
        match self.task {
            Task::Binary => f.binary_logits(&ex.input),
            Task::Seq2seq => {
                let memory = f.encode(&ex.input);
                let dec_in: Vec<usize> = [BOS].into_iter().chain(ex.label.iter().copied()).collect();
                f.decode(memory, &dec_in)
            }
        }
    }

    /// Mean token cross entropy of `label` given `input`.
    pub fn loss(&self, input: &TokenSeq, label: &TokenSeq) -> Result<f64> {
        let ex = self.example(input, label)?;
        let mut tape = Tape::no_grad();
        let bound = self.bind(&mut tape, Trainable::Nothing);
        let logits = self.logits(&mut tape, &bound, &ex);
        let loss = tape.cross_entropy(logits, &self.ce_targets(&ex.label));
        Ok(tape.value(loss).item())
    }

    /// Loss and gradients for exactly the editable view, in view order.
    pub fn loss_and_gradients(&self, input: &TokenSeq, target: &TokenSeq) -> Result<(f64, GradMap)> {
        let ex = self.example(input, target)?;
        self.example_loss_and_gradients(&ex, Trainable::Editable)
    }

    /// Loss and gradients for every parameter, in parameter order.
    pub fn loss_and_all_gradients(&self, input: &TokenSeq, target: &TokenSeq) -> Result<(f64, GradMap)> {
        let ex = self.example(input, target)?;
        self.example_loss_and_gradients(&ex, Trainable::All)
    }

    pub fn example_loss_and_gradients(&self, ex: &Example, which: Trainable) -> Result<(f64, GradMap)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, which);
        let logits = self.logits(&mut tape, &bound, ex);
        let loss = tape.cross_entropy(logits, &self.ce_targets(&ex.label));
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("task loss {value}")));
        }
        let mut grads = tape.backward(loss);
        let names: Vec<&String> = match which {
            Trainable::Nothing => Vec::new(),
            Trainable::Editable => self.view.entries().iter().map(|e| &e.name).collect(),
            Trainable::All => self.params.names().collect(),
        };
        let map = names
            .into_iter()
            .map(|name| {
                let v = bound.var(name);
                let g = grads.take(v).unwrap_or_else(|| {
                    let (r, c) = self.params.get(name).expect("bound name").shape();
                    Mat::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect();
        Ok((value, map))
    }

    /// The predicted label: argmax class, or the top beam hypothesis.
    pub fn predict_label(&self, input: &TokenSeq) -> Result<TokenSeq> {
        let ids = self.encode_input(input)?;
        Ok(match self.task {
            Task::Binary => self.decode_label(&[argmax(&self.class_probs(&ids))]),
            Task::Seq2seq => {
                let best = if self.config.beam_width == 1 {
                    self.greedy_ids(&ids)
                } else {
                    self.beam_ids(&ids, self.config.beam_width).swap_remove(0).0
                };
                self.vocab.decode(&best)
            }
        })
    }

    pub fn predict(&self, input: &TokenSeq) -> Result<Prediction> {
        let ids = self.encode_input(input)?;
        match self.task {
            Task::Binary => {
                let probs = self.class_probs(&ids);
                Ok(Prediction { label: self.decode_label(&[argmax(&probs)]), score: Score::Classes(probs), beam: None })
            }
            Task::Seq2seq => {
                let beam = self.beam_search(input, self.config.beam_width)?;
                let label = beam[0].label.clone();
                let label_ids = self.vocab.encode(&label)?;
                let score = Score::Tokens(self.token_distributions(&ids, &label_ids));
                Ok(Prediction { label, score, beam: Some(beam) })
            }
        }
    }

    /// Softmax over the two classes, True first.
    pub fn class_probs(&self, ids: &[usize]) -> Vec<f64> {
        let mut tape = Tape::no_grad();
        let bound = self.bind(&mut tape, Trainable::Nothing);
        let mut f = Forward { tape: &mut tape, bound: &bound, cfg: &self.config };
        let logits = f.binary_logits(ids);
        tape.value(logits).softmax_rows().into_vec()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    task: Task,
    config: ModelConfig,
    vocab: Vocab,
    view: ParameterView,
}

const CHECKPOINT_KIND: &str = "task-model";

impl TaskModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ModelMeta { task: self.task, config: self.config.clone(), vocab: (*self.vocab).clone(), view: self.view.clone() };
        checkpoint::save(path, CHECKPOINT_KIND, &meta, &self.params)
    }

    /// Loads a checkpoint, checking it against the architecture its config implies.
    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (ModelMeta, Params) = checkpoint::load(path, CHECKPOINT_KIND)?;
        let fresh = Self::new(meta.task, meta.vocab, meta.config, 0)?;
        if fresh.view != meta.view {
            return Err(Error::Manifest("stored parameter view does not match the architecture".into()));
        }
        params.check_finite()?;
        fresh.with_params(params)
    }
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
