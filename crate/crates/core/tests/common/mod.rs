//! Scripted models, updaters, fixtures and brute-force metric oracles.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use beliefkit::data::{BeliefRecord, BeliefStore, EntailedItem, NeutralItem, Split, Task, TokenSeq};
use beliefkit::editor::EditRequest;
use beliefkit::graph::GraphStats;
use beliefkit::update::{BeliefModel, Updater};
use beliefkit::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seq(s: &str) -> TokenSeq {
    TokenSeq::parse(s)
}

/// Predictions come from a lookup table plus edits layered on top.
#[derive(Clone, Debug)]
pub struct ScriptedModel {
    pub task: Task,
    pub base: Arc<HashMap<TokenSeq, TokenSeq>>,
    pub overrides: HashMap<TokenSeq, TokenSeq>,
    /// Answers every input with this label when set.
    pub constant: Option<TokenSeq>,
    pub alternatives: Arc<Vec<TokenSeq>>,
}

impl ScriptedModel {
    pub fn new(task: Task, base: HashMap<TokenSeq, TokenSeq>) -> Self {
        let alternatives: BTreeSet<TokenSeq> = base.values().cloned().collect();
        Self {
            task,
            base: Arc::new(base),
            overrides: HashMap::new(),
            constant: None,
            alternatives: Arc::new(alternatives.into_iter().collect()),
        }
    }
}

impl BeliefModel for ScriptedModel {
    fn task(&self) -> Task {
        self.task
    }

    fn predict_label(&self, input: &TokenSeq) -> Result<TokenSeq> {
        if let Some(c) = &self.constant {
            return Ok(c.clone());
        }
        self.overrides
            .get(input)
            .or_else(|| self.base.get(input))
            .cloned()
            .ok_or_else(|| Error::UnknownToken(input.to_string()))
    }

    fn beam_labels(&self, input: &TokenSeq) -> Result<Vec<TokenSeq>> {
        let first = self.predict_label(input)?;
        let mut out = vec![first.clone()];
        match self.task {
            Task::Binary => out.push(TokenSeq::binary(first.as_bool() != Some(true))),
            Task::Seq2seq => out.extend(self.alternatives.iter().filter(|a| **a != first).take(4).cloned()),
        }
        Ok(out)
    }

    fn same_state(&self, other: &Self) -> bool {
        self.overrides == other.overrides && self.constant == other.constant
    }
}

/// Per main input, the `(input, new prediction)` side effects of updating it.
pub type Script = HashMap<TokenSeq, Vec<(TokenSeq, TokenSeq)>>;

/// Applies the script for the request's input. The main input moves to `y*`
/// only when listed with [`to_target`].
pub struct ScriptedUpdater {
    pub script: Script,
}

/// Placeholder in a script meaning "the request's desired output".
pub fn to_target() -> TokenSeq {
    seq("<target>")
}

impl ScriptedUpdater {
    pub fn effects(&self, req: &EditRequest) -> Vec<(TokenSeq, TokenSeq)> {
        self.script
            .get(&req.input)
            .map(|v| {
                v.iter()
                    .map(|(x, y)| (x.clone(), if *y == to_target() { req.desired.clone() } else { y.clone() }))
                    .collect()
            })
            .unwrap_or_default()
    }
}

impl Updater<ScriptedModel> for ScriptedUpdater {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn update(&self, model: &ScriptedModel, req: &EditRequest) -> Result<ScriptedModel> {
        let mut out = model.clone();
        for (x, y) in self.effects(req) {
            out.overrides.insert(x, y);
        }
        Ok(out)
    }
}

/// Swaps in a model that answers `y*` everywhere.
pub struct OracleUpdater;

impl Updater<ScriptedModel> for OracleUpdater {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn update(&self, model: &ScriptedModel, req: &EditRequest) -> Result<ScriptedModel> {
        let mut out = model.clone();
        out.constant = Some(req.desired.clone());
        Ok(out)
    }
}

pub fn binary_record(id: &str, main: &str, gold: bool) -> BeliefRecord {
    BeliefRecord {
        id: id.into(),
        task: Task::Binary,
        main_input: seq(main),
        gold_labels: vec![TokenSeq::binary(gold)],
        paraphrases: vec![],
        entailed: vec![],
        local_neutral: vec![],
    }
}

/// A seeded binary fixture: every record has two paraphrases, one entailed
/// item and one local-neutral item; base predictions and update side effects
/// are random.
pub struct BinaryFixture {
    pub store: BeliefStore,
    pub model: ScriptedModel,
    pub updater: ScriptedUpdater,
}

pub fn binary_fixture(n: usize, seed: u64) -> BinaryFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut base = HashMap::new();
    let mut all_inputs = Vec::new();
    for i in 0..n {
        let mut r = binary_record(&format!("b{i:02}"), &format!("m {i}"), rng.random());
        r.paraphrases = vec![seq(&format!("p {i} a")), seq(&format!("p {i} b"))];
        r.entailed = vec![EntailedItem {
            input: seq(&format!("e {i}")),
            label: TokenSeq::binary(rng.random()),
            holds_only_if_main_true: rng.random(),
        }];
        r.local_neutral = vec![NeutralItem { input: seq(&format!("n {i}")), gold_labels: vec![TokenSeq::binary(rng.random())] }];
        for x in [&r.main_input, &r.paraphrases[0], &r.paraphrases[1], &r.entailed[0].input, &r.local_neutral[0].input] {
            base.insert(x.clone(), TokenSeq::binary(rng.random()));
            all_inputs.push(x.clone());
        }
        records.push(r);
    }
    let mut script = Script::new();
    for r in &records {
        let mut effects = Vec::new();
        if rng.random::<f64>() < 0.8 {
            effects.push((r.main_input.clone(), to_target()));
        }
        for p in &r.paraphrases {
            if rng.random::<f64>() < 0.5 {
                effects.push((p.clone(), to_target()));
            }
        }
        effects.push((r.entailed[0].input.clone(), TokenSeq::binary(rng.random())));
        if rng.random::<f64>() < 0.3 {
            effects.push((r.local_neutral[0].input.clone(), TokenSeq::binary(rng.random())));
        }
        for _ in 0..rng.random_range(0..4) {
            let x = all_inputs[rng.random_range(0..all_inputs.len())].clone();
            effects.push((x, TokenSeq::binary(rng.random())));
        }
        script.insert(r.main_input.clone(), effects);
    }
    BinaryFixture {
        store: BeliefStore::new(records, Split::Test).unwrap(),
        model: ScriptedModel::new(Task::Binary, base),
        updater: ScriptedUpdater { script },
    }
}

/// Expected per-record metrics, all with full retain samples.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub id: String,
    pub success_main: bool,
    pub success_paraphrase: Option<f64>,
    pub success_entailed: Option<f64>,
    pub retain_local_neutral: Option<f64>,
    pub retain_all: Option<f64>,
    pub delta_acc: Option<f64>,
}

/// Brute-force correct-label evaluation in blocks of `r` for a scripted
/// updater, tracking the edited predictions as an explicit overlay.
pub fn oracle_correct_label(fx: &BinaryFixture, r: usize) -> Vec<OracleOutcome> {
    let records = fx.store.records();
    let base = |x: &TokenSeq| fx.model.base[x].clone();
    let wrong: Vec<usize> = (0..records.len()).filter(|&i| !records[i].gold_labels.contains(&base(&records[i].main_input))).collect();
    let mut out = Vec::new();
    for block in wrong.chunks_exact(r) {
        let mut overlay: HashMap<TokenSeq, TokenSeq> = HashMap::new();
        let post = |o: &HashMap<TokenSeq, TokenSeq>, x: &TokenSeq| o.get(x).cloned().unwrap_or_else(|| base(x));
        for &i in block {
            let rec = &records[i];
            let y = rec.gold_labels[0].clone();
            if post(&overlay, &rec.main_input) == y {
                continue;
            }
            let Some(script) = fx.updater.script.get(&rec.main_input) else { continue };
            for (x, v) in script {
                overlay.insert(x.clone(), if *v == to_target() { y.clone() } else { v.clone() });
            }
        }
        // Pool: every main input and entailed input not owned by the block.
        let mut changed = 0usize;
        let mut size = 0usize;
        let mut acc_shift = 0i64;
        for (j, rec) in records.iter().enumerate() {
            if block.contains(&j) {
                continue;
            }
            let gold_main = rec.gold_labels.clone();
            let items = std::iter::once((&rec.main_input, gold_main)).chain(rec.entailed.iter().map(|e| (&e.input, vec![e.label.clone()])));
            for (x, gold) in items {
                size += 1;
                let (b, p) = (base(x), post(&overlay, x));
                if b != p {
                    changed += 1;
                    acc_shift += i64::from(gold.contains(&p)) - i64::from(gold.contains(&b));
                }
            }
        }
        for &i in block {
            let rec = &records[i];
            let y = rec.gold_labels[0].clone();
            let para_hits = rec.paraphrases.iter().filter(|p| post(&overlay, p) == y).count();
            let applicable: Vec<_> = rec.entailed.iter().filter(|e| !e.holds_only_if_main_true || y.as_bool() == Some(true)).collect();
            let ent_hits = applicable.iter().filter(|e| post(&overlay, &e.input) == e.label).count();
            let ln_kept = rec.local_neutral.iter().filter(|n| post(&overlay, &n.input) == base(&n.input)).count();
            let frac = |h: usize, t: usize| (t > 0).then(|| h as f64 / t as f64);
            out.push(OracleOutcome {
                id: rec.id.clone(),
                success_main: post(&overlay, &rec.main_input) == y,
                success_paraphrase: frac(para_hits, rec.paraphrases.len()),
                success_entailed: frac(ent_hits, applicable.len()),
                retain_local_neutral: frac(ln_kept, rec.local_neutral.len()),
                retain_all: frac(size - changed, size),
                delta_acc: (size > 0).then(|| acc_shift as f64 / size as f64),
            });
        }
    }
    out
}

pub struct World {
    pub store: BeliefStore,
    pub model: ScriptedModel,
    pub updater: ScriptedUpdater,
    /// Scripted edge set.
    pub edges: BTreeSet<(usize, usize)>,
    pub failed: Vec<bool>,
}

pub fn opposite(x: &TokenSeq) -> TokenSeq {
    TokenSeq::binary(x.as_bool() != Some(true))
}

pub fn world(n: usize, density: f64, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<_> = (0..n).map(|i| binary_record(&format!("g{i:02}"), &format!("claim {i}"), rng.random())).collect();
    let base: HashMap<_, _> = records.iter().map(|r| (r.main_input.clone(), TokenSeq::binary(rng.random()))).collect();
    let mut script = Script::new();
    let mut edges = BTreeSet::new();
    let mut failed = vec![false; n];
    for (u, r) in records.iter().enumerate() {
        let mut fx = Vec::new();
        if rng.random::<f64>() < 0.9 {
            fx.push((r.main_input.clone(), to_target()));
        } else {
            failed[u] = true;
        }
        for (v, other) in records.iter().enumerate() {
            if v != u && rng.random::<f64>() < density {
                fx.push((other.main_input.clone(), opposite(&base[&other.main_input])));
                edges.insert((u, v));
            }
        }
        script.insert(r.main_input.clone(), fx);
    }
    World {
        store: BeliefStore::new(records, Split::Test).unwrap(),
        model: ScriptedModel::new(Task::Binary, base),
        updater: ScriptedUpdater { script },
        edges,
        failed,
    }
}

/// Degree, percentile and triple counts by direct enumeration over node pairs.
pub fn brute_stats(n: usize, e: &BTreeSet<(usize, usize)>, correct: &[bool]) -> GraphStats {
    let ins: Vec<usize> = (0..n).map(|v| (0..n).filter(|&u| e.contains(&(u, v))).count()).collect();
    let outs: Vec<usize> = (0..n).map(|u| (0..n).filter(|&v| e.contains(&(u, v))).count()).collect();
    let corrupted: Vec<usize> = (0..n).map(|u| (0..n).filter(|&v| e.contains(&(u, v)) && correct[v]).count()).collect();
    // Smallest v whose count covers at least 95% of nodes.
    let p95 = |xs: &[usize]| (0..).find(|&v| 100 * xs.iter().filter(|&&x| x <= v).count() >= 95 * n).unwrap();
    let edgeless = (0..n).filter(|&i| ins[i] == 0 && outs[i] == 0).count();
    let (mut hit, mut tot) = (0usize, 0usize);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if a != b && b != c && a != c && e.contains(&(a, b)) && e.contains(&(b, c)) {
                    tot += 1;
                    hit += usize::from(e.contains(&(a, c)));
                }
            }
        }
    }
    GraphStats {
        num_nodes: n,
        num_edges: e.len(),
        pct_edgeless: 100.0 * edgeless as f64 / n as f64,
        in_edges_p95: p95(&ins),
        out_edges_p95: p95(&outs),
        corrupted_p95: p95(&corrupted),
        pct_update_transitivity: (tot > 0).then(|| 100.0 * hit as f64 / tot as f64),
        num_flip_failures: 0,
    }
}

/// Resamples with explicit index vectors and a sort-free two-pass tail count.
pub fn bootstrap_oracle(m: &[Vec<f64>], other: &[Vec<f64>], b: usize, seed: u64) -> (f64, f64, f64) {
    let (n, s) = (m.len(), m[0].len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::new();
    let mut diffs = Vec::new();
    for _ in 0..b {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let cols: Vec<usize> = (0..s).map(|_| rng.random_range(0..s)).collect();
        let cell = |x: &[Vec<f64>]| rows.iter().map(|&r| cols.iter().map(|&c| x[r][c]).sum::<f64>()).sum::<f64>() / (n * s) as f64;
        stats.push(cell(m));
        diffs.push(cell(m) - cell(other));
    }
    let mut sorted = stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let h = p * (b - 1) as f64;
        let (i, frac) = (h as usize, h.fract());
        if i + 1 < b { sorted[i] * (1.0 - frac) + sorted[i + 1] * frac } else { sorted[i] }
    };
    let below = diffs.iter().filter(|d| **d <= 0.0).count();
    let above = diffs.iter().filter(|d| **d >= 0.0).count();
    let p = (2.0 * below.min(above) as f64 / b as f64).min(1.0);
    (q(0.025), q(0.975), p)
}

/// Detection metrics from the scripted base predictions. Consistency counts
/// agreeing pairs per class as `c (c - 1) / 2` instead of enumerating pairs.
pub fn oracle_detection(store: &BeliefStore, model: &ScriptedModel) -> (Option<f64>, Option<f64>, Option<f64>) {
    let pred = |x: &TokenSeq| model.base[x].clone();
    let mut group_scores = Vec::new();
    let (mut ent_hits, mut ent_total, mut contra_hits, mut contra_total) = (0usize, 0usize, 0usize, 0usize);
    for r in store.records() {
        let main = pred(&r.main_input);
        let members: Vec<TokenSeq> = std::iter::once(main.clone()).chain(r.paraphrases.iter().map(pred)).collect();
        let m = members.len();
        if m >= 2 {
            let mut counts: HashMap<&TokenSeq, usize> = HashMap::new();
            for x in &members {
                *counts.entry(x).or_default() += 1;
            }
            let agree: usize = counts.values().map(|c| c * (c - 1) / 2).sum();
            group_scores.push(agree as f64 / (m * (m - 1) / 2) as f64);
        }
        let main_right = r.gold_labels.contains(&main);
        let gold_true = r.gold_labels[0] == TokenSeq::binary(true);
        for e in &r.entailed {
            let right = pred(&e.input) == e.label;
            if main_right && (gold_true || !e.holds_only_if_main_true) {
                ent_total += 1;
                ent_hits += usize::from(right);
            }
            if !right {
                contra_total += 1;
                contra_hits += usize::from(main == TokenSeq::binary(false));
            }
        }
    }
    let frac = |h: usize, t: usize| (t > 0).then(|| h as f64 / t as f64);
    let consistency = (!group_scores.is_empty()).then(|| group_scores.iter().sum::<f64>() / group_scores.len() as f64);
    (consistency, frac(ent_hits, ent_total), frac(contra_hits, contra_total))
}
