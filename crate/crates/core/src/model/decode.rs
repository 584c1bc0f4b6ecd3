use std::cmp::Ordering;

use super::{Forward, TaskModel, Trainable, BOS, EOS, SEP};
use crate::autodiff::{Tape, Var};
use crate::data::{Task, TokenSeq};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    pub label: TokenSeq,
    /// Total log-probability including the end-of-sequence step.
    pub log_prob: f64,
}

/// Log-softmax of one logit row with every special token but EOS removed.
fn masked_log_probs(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    out[BOS] = f64::NEG_INFINITY;
    out[SEP] = f64::NEG_INFINITY;
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    out.iter_mut().for_each(|v| *v -= lse);
    out
}

struct Decoder<'a> {
    model: &'a TaskModel,
    tape: Tape,
    bound: super::Bound,
    memory: Var,
}

impl<'a> Decoder<'a> {
    fn new(model: &'a TaskModel, input: &[usize]) -> Self {
        let mut tape = Tape::no_grad();
        let bound = model.bind(&mut tape, Trainable::Nothing);
        let memory = Forward { tape: &mut tape, bound: &bound, cfg: &model.config }.encode(input);
        Self { model, tape, bound, memory }
    }

    /// Masked next-token log-probabilities after the output prefix `prefix`.
    fn next(&mut self, prefix: &[usize]) -> Vec<f64> {
        let dec_in: Vec<usize> = [BOS].into_iter().chain(prefix.iter().copied()).collect();
        let mut f = Forward { tape: &mut self.tape, bound: &self.bound, cfg: &self.model.config };
        let logits = f.decode(self.memory, &dec_in);
        let v = self.tape.value(logits);
        masked_log_probs(v.row(v.rows() - 1))
    }
}

#[derive(Clone)]
struct Hyp {
    ids: Vec<usize>,
    log_prob: f64,
    done: bool,
}

fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal).then_with(|| a.ids.cmp(&b.ids))
}

impl TaskModel {
    pub(crate) fn greedy_ids(&self, input: &[usize]) -> Vec<usize> {
        let mut dec = Decoder::new(self, input);
        let mut out = Vec::new();
        for _ in 0..self.config.max_decode_len {
            let lp = dec.next(&out);
            let tok = super::argmax(&lp);
            if tok == EOS {
                break;
            }
            out.push(tok);
        }
        out
    }

    /// Ranked `(ids, log_prob)` pairs, best first. Finished hypotheses stay in
    /// the pool and compete on total log-probability; ties go to the
    /// lexicographically smaller id sequence.
    pub(crate) fn beam_ids(&self, input: &[usize], width: usize) -> Vec<(Vec<usize>, f64)> {
        let mut dec = Decoder::new(self, input);
        let mut beams = vec![Hyp { ids: Vec::new(), log_prob: 0.0, done: false }];
        for step in 0..=self.config.max_decode_len {
            if beams.iter().all(|h| h.done) {
                break;
            }
            let last = step == self.config.max_decode_len;
            let mut pool = Vec::new();
            for h in &beams {
                if h.done {
                    pool.push(h.clone());
                    continue;
                }
                let lp = dec.next(&h.ids);
                for (tok, &l) in lp.iter().enumerate() {
                    if l == f64::NEG_INFINITY || (last && tok != EOS) {
                        continue;
                    }
                    let mut ids = h.ids.clone();
                    let done = tok == EOS;
                    if !done {
                        ids.push(tok);
                    }
                    pool.push(Hyp { ids, log_prob: h.log_prob + l, done });
                }
            }
            pool.sort_by(rank);
            pool.truncate(width);
            beams = pool;
        }
        beams.into_iter().map(|h| (h.ids, h.log_prob)).collect()
    }

    pub fn greedy_decode(&self, input: &TokenSeq) -> Result<TokenSeq> {
        self.require_seq2seq()?;
        let ids = self.encode_input(input)?;
        Ok(self.vocab.decode(&self.greedy_ids(&ids)))
    }

    pub fn beam_search(&self, input: &TokenSeq, width: usize) -> Result<Vec<BeamCandidate>> {
        self.require_seq2seq()?;
        if width == 0 {
            return Err(Error::config("beam_width", "must be positive"));
        }
        let ids = self.encode_input(input)?;
        Ok(self
            .beam_ids(&ids, width)
            .into_iter()
            .map(|(ids, log_prob)| BeamCandidate { label: self.vocab.decode(&ids), log_prob })
            .collect())
    }

    /// Masked next-token distributions along `label`, including the final
    /// end-of-sequence step.
    pub(crate) fn token_distributions(&self, input: &[usize], label: &[usize]) -> Vec<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let bound = self.bind(&mut tape, Trainable::Nothing);
        let mut f = Forward { tape: &mut tape, bound: &bound, cfg: &self.config };
        let memory = f.encode(input);
        let dec_in: Vec<usize> = [BOS].into_iter().chain(label.iter().copied()).collect();
        let logits = f.decode(memory, &dec_in);
        let v = tape.value(logits);
        (0..v.rows()).map(|r| masked_log_probs(v.row(r)).into_iter().map(f64::exp).collect()).collect()
    }

    fn require_seq2seq(&self) -> Result<()> {
        match self.task {
            Task::Seq2seq => Ok(()),
            Task::Binary => Err(Error::Invalid("decoding needs a seq2seq model".into())),
        }
    }
}
