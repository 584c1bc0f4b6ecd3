//! Pre-LN transformer blocks expressed on the autodiff tape.
//!
//! Parameters are looked up by name from a [`Bound`] map, so the same code
//! serves training (parameters as trainable leaves), editing (only the
//! editable view trainable) and inference (a `no_grad` tape).

use indexmap::IndexMap;
use rand::Rng;

use super::params::Params;
use super::ModelConfig;
use crate::autodiff::{Tape, Var};
use crate::data::Task;
use crate::tensor::Mat;

const MASKED: f64 = -1e9;

/// Parameter name to tape variable.
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn new(vars: IndexMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Builds freshly initialised parameters. The returned flags mark editable entries.
pub fn init_params<R: Rng + ?Sized>(task: Task, vocab_size: usize, cfg: &ModelConfig, rng: &mut R) -> (Params, Vec<bool>) {
    let mut b = Builder { params: Params::new(), editable: Vec::new(), cfg, rng };
    let d = cfg.d_model;
    b.embedding("enc.tok_emb", vocab_size);
    b.embedding("enc.pos_emb", cfg.max_positions);
    for i in 0..cfg.n_encoder_layers {
        let p = format!("enc.{i}");
        b.layer_norm(&format!("{p}.ln1"));
        b.attention(&format!("{p}.attn"));
        b.layer_norm(&format!("{p}.ln2"));
        b.feed_forward(&format!("{p}.ff"));
    }
    b.layer_norm("enc.ln_f");
    match task {
        Task::Binary => b.linear("cls", d, 2, false),
        Task::Seq2seq => {
            b.embedding("dec.tok_emb", vocab_size);
            b.embedding("dec.pos_emb", cfg.max_positions);
            for i in 0..cfg.n_decoder_layers {
                let p = format!("dec.{i}");
                b.layer_norm(&format!("{p}.ln1"));
                b.attention(&format!("{p}.self_attn"));
                b.layer_norm(&format!("{p}.ln2"));
                b.attention(&format!("{p}.cross_attn"));
                b.layer_norm(&format!("{p}.ln3"));
                b.feed_forward(&format!("{p}.ff"));
            }
            b.layer_norm("dec.ln_f");
            b.linear("out", d, vocab_size, false);
        }
    }
    (b.params, b.editable)
}

struct Builder<'a, R: ?Sized> {
    params: Params,
    editable: Vec<bool>,
    cfg: &'a ModelConfig,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn push(&mut self, name: String, value: Mat, editable: bool) {
        self.params.insert(name, value);
        self.editable.push(editable);
    }

    fn embedding(&mut self, name: &str, rows: usize) {
        let m = Mat::randn(rows, self.cfg.d_model, self.cfg.embedding_std, self.rng);
        self.push(name.to_string(), m, false);
    }

    fn layer_norm(&mut self, name: &str) {
        let d = self.cfg.d_model;
        self.push(format!("{name}.gamma"), Mat::filled(1, d, 1.0), false);
        self.push(format!("{name}.beta"), Mat::zeros(1, d), false);
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, editable: bool) {
        let w = Mat::randn(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), self.rng);
        self.push(format!("{name}.weight"), w, editable);
        self.push(format!("{name}.bias"), Mat::zeros(1, fan_out), false);
    }

    fn attention(&mut self, name: &str) {
        let d = self.cfg.d_model;
        for proj in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{proj}"), d, d, true);
        }
    }

    fn feed_forward(&mut self, name: &str) {
        let (d, f) = (self.cfg.d_model, self.cfg.d_ff);
        self.linear(&format!("{name}.in"), d, f, true);
        self.linear(&format!("{name}.out"), f, d, true);
    }
}

pub struct Forward<'a> {
    pub tape: &'a mut Tape,
    pub bound: &'a Bound,
    pub cfg: &'a ModelConfig,
}

impl Forward<'_> {
    fn w(&self, name: &str) -> Var {
        self.bound.var(name)
    }

    fn linear(&mut self, x: Var, name: &str) -> Var {
        let y = self.tape.matmul(x, self.w(&format!("{name}.weight")));
        self.tape.add_row(y, self.w(&format!("{name}.bias")))
    }

    fn layer_norm(&mut self, x: Var, name: &str) -> Var {
        let g = self.w(&format!("{name}.gamma"));
        let b = self.w(&format!("{name}.beta"));
        self.tape.layer_norm(x, g, b)
    }

    fn embed(&mut self, prefix: &str, ids: &[usize]) -> Var {
        let tok = self.tape.gather(self.w(&format!("{prefix}.tok_emb")), ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = self.tape.gather(self.w(&format!("{prefix}.pos_emb")), &positions);
        self.tape.add(tok, pos)
    }

    fn attention(&mut self, xq: Var, xkv: Var, name: &str, causal: bool) -> Var {
        let q = self.linear(xq, &format!("{name}.q"));
        let k = self.linear(xkv, &format!("{name}.k"));
        let v = self.linear(xkv, &format!("{name}.v"));
        let (tq, tk) = (self.tape.value(q).rows(), self.tape.value(k).rows());
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = causal.then(|| {
            let mut m = Mat::zeros(tq, tk);
            for r in 0..tq {
                for c in r + 1..tk {
                    m.set(r, c, MASKED);
                }
            }
            m
        });
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    self.tape.slice_cols(q, h * dh, dh),
                    self.tape.slice_cols(k, h * dh, dh),
                    self.tape.slice_cols(v, h * dh, dh),
                )
            };
            let s = self.tape.matmul_t(qh, kh);
            let mut s = self.tape.scale(s, scale);
            if let Some(m) = &mask {
                s = self.tape.add_const(s, m);
            }
            let p = self.tape.softmax_rows(s);
            outs.push(self.tape.matmul(p, vh));
        }
        let o = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs) };
        self.linear(o, &format!("{name}.o"))
    }

    fn feed_forward(&mut self, x: Var, name: &str) -> Var {
        let h = self.linear(x, &format!("{name}.in"));
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{name}.out"))
    }

    /// `len(ids) x d_model` encoder states after the final norm.
    pub fn encode(&mut self, ids: &[usize]) -> Var {
        let mut x = self.embed("enc", ids);
        for i in 0..self.cfg.n_encoder_layers {
            let p = format!("enc.{i}");
            let h = self.layer_norm(x, &format!("{p}.ln1"));
            let a = self.attention(h, h, &format!("{p}.attn"), false);
            x = self.tape.add(x, a);
            let h = self.layer_norm(x, &format!("{p}.ln2"));
            let f = self.feed_forward(h, &format!("{p}.ff"));
            x = self.tape.add(x, f);
        }
        self.layer_norm(x, "enc.ln_f")
    }

    /// `1 x 2` class logits, True first.
    pub fn binary_logits(&mut self, ids: &[usize]) -> Var {
        let enc = self.encode(ids);
        let pooled = self.tape.mean_rows(enc);
        self.linear(pooled, "cls")
    }

    /// `len(dec_ids) x vocab` next-token logits.
    pub fn decode(&mut self, memory: Var, dec_ids: &[usize]) -> Var {
        let mut x = self.embed("dec", dec_ids);
        for i in 0..self.cfg.n_decoder_layers {
            let p = format!("dec.{i}");
            let h = self.layer_norm(x, &format!("{p}.ln1"));
            let a = self.attention(h, h, &format!("{p}.self_attn"), true);
            x = self.tape.add(x, a);
            let h = self.layer_norm(x, &format!("{p}.ln2"));
            let c = self.attention(h, memory, &format!("{p}.cross_attn"), false);
            x = self.tape.add(x, c);
            let h = self.layer_norm(x, &format!("{p}.ln3"));
            let f = self.feed_forward(h, &format!("{p}.ff"));
            x = self.tape.add(x, f);
        }
        let x = self.layer_norm(x, "dec.ln_f");
        self.linear(x, "out")
    }
}
