//! The learned optimizer: a sequence encoder over `(x, ŷ, y*)` and one set of
//! factor heads per editable matrix, turning task gradients into updates.

pub mod baseline;

use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint;
use crate::data::TokenSeq;
use crate::error::{Error, Result};
use crate::model::{Bound, GradMap, ParameterView, Params, TaskModel, Vocab, SEP};
use crate::tensor::Mat;

pub use baseline::{baseline_grid, baseline_update, BaselineOutcome, BaselineSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditRequest {
    pub input: TokenSeq,
    pub current: TokenSeq,
    pub desired: TokenSeq,
}

impl EditRequest {
    pub fn new(input: TokenSeq, current: TokenSeq, desired: TokenSeq) -> Result<Self> {
        if current == desired {
            return Err(Error::Invalid(format!("desired output `{desired}` equals the current prediction")));
        }
        Ok(Self { input, current, desired })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden: usize,
    /// Step size the untrained editor takes, as if it were plain gradient descent.
    pub init_step: f64,
    pub head_init_std: f64,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self { embed_dim: 32, hidden_dim: 64, head_hidden: 32, init_step: 0.1, head_init_std: 0.01 }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("embed_dim", self.embed_dim), ("hidden_dim", self.hidden_dim), ("head_hidden", self.head_hidden)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.init_step.is_finite() && self.init_step >= 0.0) {
            return Err(Error::config("init_step", "must be non-negative"));
        }
        if !(self.head_init_std.is_finite() && self.head_init_std >= 0.0) {
            return Err(Error::config("head_init_std", "must be non-negative"));
        }
        Ok(())
    }
}

/// Factors for one editable matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDelta {
    /// `softmax(u) vᵀ`
    pub a: Mat,
    /// `softmax(γ) δᵀ`
    pub b: Mat,
    pub eta: f64,
}

impl MatrixDelta {
    /// `η (A ∘ grad + B)`
    pub fn step(&self, grad: &Mat) -> Mat {
        let mut out = self.a.zip_map(grad, |a, g| a * g);
        out.add_assign(&self.b);
        out.data_mut().iter_mut().for_each(|v| *v *= self.eta);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditDelta {
    pub matrices: IndexMap<String, MatrixDelta>,
}

impl EditDelta {
    /// Adds `η (A ∘ grad + B)` to every editable matrix of `model`.
    pub fn apply(&self, model: &mut TaskModel, grads: &GradMap) -> Result<()> {
        for (name, d) in &self.matrices {
            let g = grads.get(name).ok_or_else(|| Error::Manifest(format!("missing gradient for `{name}`")))?;
            let mut w = model.params().get(name).expect("delta names come from the view").clone();
            w.add_assign(&d.step(g));
            if !w.all_finite() {
                return Err(Error::NonFinite(name.clone()));
            }
            model.set_editable(name, w)?;
        }
        Ok(())
    }
}

/// Tape variables of the factors for one matrix.
pub struct FactorVars {
    pub a: Var,
    pub b: Var,
    /// `1 x 1`
    pub eta: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditorNetwork {
    config: EditorConfig,
    vocab: Arc<Vocab>,
    view: ParameterView,
    params: Params,
}

/// Bound on the gate logit; sigmoid(±30) is about 1e-13 away from 0 or 1.
const GATE_LOGIT_BOUND: f64 = 30.0;

fn head_name(i: usize, part: &str) -> String {
    format!("head.{i}.{part}")
}

impl EditorNetwork {
    /// One head set per entry of `model`'s editable view.
    pub fn new(model: &TaskModel, config: EditorConfig, seed: u64) -> Result<Self> {
        Self::for_view(model.vocab().clone(), model.view().clone(), config, seed)
    }

    pub fn for_view(vocab: Vocab, view: ParameterView, config: EditorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if view.is_empty() {
            return Err(Error::Manifest("editor needs at least one editable matrix".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h, hh) = (config.embed_dim, config.hidden_dim, config.head_hidden);
        let s = config.head_init_std;
        let mut p = Params::new();
        p.insert("enc.emb", Mat::randn(vocab.len(), e, 0.1, &mut rng));
        p.insert("enc.lstm.wx", Mat::randn(e, 4 * h, 1.0 / (e as f64).sqrt(), &mut rng));
        p.insert("enc.lstm.wh", Mat::randn(h, 4 * h, 1.0 / (h as f64).sqrt(), &mut rng));
        // Forget-gate bias of one keeps early gradients flowing through the cell.
        let mut bias = Mat::zeros(1, 4 * h);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        p.insert("enc.lstm.b", bias);
        for (i, entry) in view.entries().iter().enumerate() {
            let (d1, d2) = entry.shape;
            p.insert(head_name(i, "hidden.weight"), Mat::randn(h, hh, 1.0 / (h as f64).sqrt(), &mut rng));
            p.insert(head_name(i, "hidden.bias"), Mat::zeros(1, hh));
            for (part, width, bias_value) in [
                ("u", d1, 0.0),
                // With softmax(u) near uniform and η near 1/2 this makes A ∘ G ≈ -init_step·G.
                ("v", d2, -2.0 * config.init_step * d1 as f64),
                ("gamma", d1, 0.0),
                ("delta", d2, 0.0),
                ("gate", 1, 0.0),
            ] {
                p.insert(head_name(i, &format!("{part}.weight")), Mat::randn(hh, width, s, &mut rng));
                p.insert(head_name(i, &format!("{part}.bias")), Mat::filled(1, width, bias_value));
            }
        }
        Ok(Self { config, vocab: Arc::new(vocab), view, params: p })
    }

    pub fn config(&self) -> &EditorConfig {
        &self.config
    }

    pub fn view(&self) -> &ParameterView {
        &self.view
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Same network with replacement parameters of identical names and shapes.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Manifest(format!("expected {} editor parameters, got {}", self.params.len(), params.len())));
        }
        for ((a, ma), (b, mb)) in self.params.iter().zip(params.iter()) {
            if a != b {
                return Err(Error::Manifest(format!("expected editor parameter `{a}`, found `{b}`")));
            }
            if ma.shape() != mb.shape() {
                return Err(Error::Shape { name: a.clone(), expected: ma.shape(), got: mb.shape() });
            }
        }
        Ok(Self { params, ..self.clone() })
    }

    /// Errors unless `model` has exactly the view and vocabulary this editor was built for.
    pub fn check_compatible(&self, model: &TaskModel) -> Result<()> {
        if model.view() != &self.view {
            return Err(Error::Manifest("editor heads do not match the model's editable view".into()));
        }
        if model.vocab() != self.vocab.as_ref() {
            return Err(Error::Manifest("editor vocabulary differs from the model's".into()));
        }
        Ok(())
    }

    /// `[x; <sep>; ŷ; <sep>; y*]` as ids.
    pub fn conditioning_ids(&self, req: &EditRequest) -> Result<Vec<usize>> {
        let mut ids = self.vocab.encode(&req.input)?;
        ids.push(SEP);
        ids.extend(self.vocab.encode(&req.current)?);
        ids.push(SEP);
        ids.extend(self.vocab.encode(&req.desired)?);
        Ok(ids)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound::new(
            self.params
                .names()
                .map(|n| {
                    let arc = self.params.arc(n).expect("own name").clone();
                    (n.clone(), if trainable { tape.param(arc) } else { tape.constant_arc(arc) })
                })
                .collect(),
        )
    }

    /// Final LSTM hidden state, `1 x hidden_dim`.
    fn encode(&self, tape: &mut Tape, b: &Bound, ids: &[usize]) -> Var {
        let h_dim = self.config.hidden_dim;
        let x = tape.gather(b.var("enc.emb"), ids);
        let xw = tape.matmul(x, b.var("enc.lstm.wx"));
        let mut h = tape.constant(Mat::zeros(1, h_dim));
        let mut c = tape.constant(Mat::zeros(1, h_dim));
        for t in 0..ids.len() {
            let xt = tape.gather(xw, &[t]);
            let hw = tape.matmul(h, b.var("enc.lstm.wh"));
            let z = tape.add(xt, hw);
            let z = tape.add(z, b.var("enc.lstm.b"));
            let i = tape.slice_cols(z, 0, h_dim);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(z, h_dim, h_dim);
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(z, 2 * h_dim, h_dim);
            let g = tape.tanh(g);
            let o = tape.slice_cols(z, 3 * h_dim, h_dim);
            let o = tape.sigmoid(o);
            let fc = tape.mul(f, c);
            let ig = tape.mul(i, g);
            c = tape.add(fc, ig);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
        }
        h
    }

    fn head(&self, tape: &mut Tape, b: &Bound, i: usize, part: &str, z: Var) -> Var {
        let y = tape.matmul(z, b.var(&head_name(i, &format!("{part}.weight"))));
        tape.add_row(y, b.var(&head_name(i, &format!("{part}.bias"))))
    }

    /// Factor variables for every view entry, in view order.
    pub fn factor_vars(&self, tape: &mut Tape, b: &Bound, cond: &[usize]) -> Vec<FactorVars> {
        let h = self.encode(tape, b, cond);
        (0..self.view.len())
            .map(|i| {
                let z = self.head(tape, b, i, "hidden", h);
                let z = tape.gelu(z);
                let u = self.head(tape, b, i, "u", z);
                let v = self.head(tape, b, i, "v", z);
                let gamma = self.head(tape, b, i, "gamma", z);
                let delta = self.head(tape, b, i, "delta", z);
                let gate = self.head(tape, b, i, "gate", z);
                let su = tape.softmax_rows(u);
                let su = tape.transpose(su);
                let a = tape.matmul(su, v);
                let sg = tape.softmax_rows(gamma);
                let sg = tape.transpose(sg);
                let bm = tape.matmul(sg, delta);
                // 30 tanh(x / 30) keeps sigmoid's output strictly inside (0, 1) in f64.
                let gate = tape.scale(gate, 1.0 / GATE_LOGIT_BOUND);
                let gate = tape.tanh(gate);
                let gate = tape.scale(gate, GATE_LOGIT_BOUND);
                let eta = tape.sigmoid(gate);
                FactorVars { a, b: bm, eta }
            })
            .collect()
    }

    /// Per-matrix factors for `req`. The gradients only serve as a shape check:
    /// the factors depend on the request alone.
    pub fn propose_delta(&self, req: &EditRequest, grads: &GradMap) -> Result<EditDelta> {
        self.view.check_grads(grads)?;
        self.delta_for(req)
    }

    pub(crate) fn delta_for(&self, req: &EditRequest) -> Result<EditDelta> {
        let cond = self.conditioning_ids(req)?;
        let mut tape = Tape::no_grad();
        let b = self.bind(&mut tape, false);
        let vars = self.factor_vars(&mut tape, &b, &cond);
        let matrices = self
            .view
            .entries()
            .iter()
            .zip(vars)
            .map(|(e, f)| {
                let d = MatrixDelta {
                    a: tape.value(f.a).clone(),
                    b: tape.value(f.b).clone(),
                    eta: tape.value(f.eta).item(),
                };
                (e.name.clone(), d)
            })
            .collect();
        Ok(EditDelta { matrices })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = EditorMeta { config: self.config.clone(), vocab: (*self.vocab).clone(), view: self.view.clone() };
        checkpoint::save(path, EDITOR_KIND, &meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (EditorMeta, Params) = checkpoint::load(path, EDITOR_KIND)?;
        let fresh = Self::for_view(meta.vocab, meta.view, meta.config, 0)?;
        params.check_finite()?;
        fresh.with_params(params)
    }
}

const EDITOR_KIND: &str = "editor";

#[derive(Serialize, Deserialize)]
struct EditorMeta {
    config: EditorConfig,
    vocab: Vocab,
    view: ParameterView,
}

/// Runs `k` editor steps: each recomputes the task gradient toward `y*` at the
/// current parameters and adds `η (A ∘ grad + B)`. The factors come from the
/// request, which stays fixed across the steps.
pub fn apply_update(model: &TaskModel, editor: &EditorNetwork, req: &EditRequest, k: usize) -> Result<TaskModel> {
    editor.check_compatible(model)?;
    let mut out = model.clone();
    if k == 0 {
        return Ok(out);
    }
    let delta = editor.delta_for(req)?;
    for _ in 0..k {
        let (_, grads) = out.loss_and_gradients(&req.input, &req.desired)?;
        delta.apply(&mut out, &grads)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
