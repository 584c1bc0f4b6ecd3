use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{draw_update_label, BeliefRecord, BeliefStore, LabelPolicy, TokenSeq};
use crate::editor::EditRequest;
use crate::error::{Error, Result};
use crate::update::{BeliefModel, Updater};

/// Which records get updated, and toward what.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Records the base model gets wrong, updated toward their gold label.
    CorrectLabel,
    /// Every record, updated toward a random beam alternative.
    BeamLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub targets: TargetPolicy,
    pub r_test: usize,
    /// Items drawn per block for retain rate and accuracy change.
    pub sample_size: usize,
    pub seed: u64,
    /// Evaluate only the first eligible records.
    pub max_records: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { targets: TargetPolicy::CorrectLabel, r_test: 1, sample_size: 30, seed: 0, max_records: None }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_test == 0 {
            return Err(Error::config("r_test", "must be at least 1"));
        }
        Ok(())
    }
}

/// Metrics for one updated record. `None` means the data type is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub record_id: String,
    pub block: usize,
    pub desired: TokenSeq,
    /// The running model already produced the target, so no update ran.
    pub skipped: bool,
    pub success_main: bool,
    pub success_paraphrase: Option<f64>,
    pub success_entailed: Option<f64>,
    pub retain_local_neutral: Option<f64>,
    pub retain_all: Option<f64>,
    pub delta_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub n_updates: usize,
    pub n_blocks: usize,
    pub success_main: Option<f64>,
    pub success_paraphrase: Option<f64>,
    pub success_entailed: Option<f64>,
    pub retain_local_neutral: Option<f64>,
    pub retain_all: Option<f64>,
    pub delta_acc: Option<f64>,
}

impl UpdateSummary {
    pub fn from_outcomes(outcomes: &[UpdateOutcome], n_blocks: usize) -> Self {
        fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let v: Vec<f64> = xs.flatten().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
        Self {
            n_updates: outcomes.len(),
            n_blocks,
            success_main: mean(outcomes.iter().map(|o| Some(if o.success_main { 1.0 } else { 0.0 }))),
            success_paraphrase: mean(outcomes.iter().map(|o| o.success_paraphrase)),
            success_entailed: mean(outcomes.iter().map(|o| o.success_entailed)),
            retain_local_neutral: mean(outcomes.iter().map(|o| o.retain_local_neutral)),
            retain_all: mean(outcomes.iter().map(|o| o.retain_all)),
            delta_acc: mean(outcomes.iter().map(|o| o.delta_acc)),
        }
    }

    /// Mean of update success over the available data types.
    pub fn average_success(&self) -> Option<f64> {
        let v: Vec<f64> = [self.success_main, self.success_paraphrase, self.success_entailed].into_iter().flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub updater: String,
    pub config: EvalConfig,
    pub outcomes: Vec<UpdateOutcome>,
    pub summary: UpdateSummary,
}

/// A gold-labelled input that retain and accuracy samples draw from.
struct PoolItem<'a> {
    owner: usize,
    input: &'a TokenSeq,
    gold: &'a [TokenSeq],
}

fn build_pool(store: &BeliefStore) -> Vec<PoolItem<'_>> {
    let with_entailed = store.has_entailed();
    let mut pool = Vec::new();
    for (i, r) in store.records().iter().enumerate() {
        pool.push(PoolItem { owner: i, input: &r.main_input, gold: &r.gold_labels });
        if with_entailed {
            for e in &r.entailed {
                pool.push(PoolItem { owner: i, input: &e.input, gold: std::slice::from_ref(&e.label) });
            }
        }
    }
    pool
}

struct BaseCache<'m, M> {
    model: &'m M,
    cache: HashMap<TokenSeq, TokenSeq>,
}

impl<M: BeliefModel> BaseCache<'_, M> {
    fn get(&mut self, input: &TokenSeq) -> Result<TokenSeq> {
        if let Some(p) = self.cache.get(input) {
            return Ok(p.clone());
        }
        let p = self.model.predict_label(input)?;
        self.cache.insert(input.clone(), p.clone());
        Ok(p)
    }
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Draws up to `n` pool items, least-selected first with random tie-breaks,
/// excluding items owned by `exclude`.
fn rotation_sample(counts: &mut [usize], pool_owners: &[usize], exclude: &HashSet<usize>, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..counts.len()).filter(|&i| !exclude.contains(&pool_owners[i])).collect();
    candidates.shuffle(rng);
    candidates.sort_by_key(|&i| counts[i]);
    candidates.truncate(n);
    for &i in &candidates {
        counts[i] += 1;
    }
    candidates
}

/// Single-update protocol: sequential evaluation with blocks of one.
pub fn evaluate_single_updates<M: BeliefModel, U: Updater<M> + ?Sized>(
    model: &M,
    updater: &U,
    store: &BeliefStore,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    let cfg = EvalConfig { r_test: 1, ..cfg.clone() };
    evaluate_sequential_updates(model, updater, store, &cfg)
}

/// Applies `r_test` updates in a row from the base model, scores every
/// record of the block against the final model, then rolls back. Records
/// past the last full block are skipped.
pub fn evaluate_sequential_updates<M: BeliefModel, U: Updater<M> + ?Sized>(
    model: &M,
    updater: &U,
    store: &BeliefStore,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(Error::Empty("evaluation store has no records".into()));
    }
    updater.check_compatible(model)?;
    let records = store.records();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut base = BaseCache { model, cache: HashMap::new() };

    let mut eligible = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let keep = match cfg.targets {
            TargetPolicy::CorrectLabel => !r.is_correct(&base.get(&r.main_input)?),
            TargetPolicy::BeamLabel => true,
        };
        if keep {
            eligible.push(i);
        }
    }
    if let Some(m) = cfg.max_records {
        eligible.truncate(m);
    }
    if eligible.is_empty() {
        return Err(Error::Empty("no records qualify for evaluation".into()));
    }
    if cfg.r_test > eligible.len() {
        return Err(Error::config("r_test", format!("{} exceeds the {} evaluable records", cfg.r_test, eligible.len())));
    }

    let pool = build_pool(store);
    let owners: Vec<usize> = pool.iter().map(|p| p.owner).collect();
    let mut counts = vec![0usize; pool.len()];
    let n_blocks = eligible.len() / cfg.r_test;
    let mut outcomes = Vec::with_capacity(n_blocks * cfg.r_test);

    for (b, block) in eligible.chunks_exact(cfg.r_test).enumerate() {
        let mut current = model.clone();
        let mut targets = Vec::with_capacity(block.len());
        for (j, &i) in block.iter().enumerate() {
            let r = &records[i];
            let pred = if j == 0 { base.get(&r.main_input)? } else { current.predict_label(&r.main_input)? };
            let (desired, skip) = match cfg.targets {
                TargetPolicy::CorrectLabel => (r.canonical_label().clone(), r.is_correct(&pred)),
                TargetPolicy::BeamLabel => {
                    let beam = current.beam_labels(&r.main_input)?;
                    let y = draw_update_label(r, &pred, LabelPolicy::Beam, store.label_vocabulary(), &mut rng, Some(&beam))?;
                    (y, false)
                }
            };
            if !skip {
                let req = EditRequest::new(r.main_input.clone(), pred, desired.clone())?;
                current = updater.update(&current, &req)?;
            }
            targets.push((desired, skip));
        }

        let exclude: HashSet<usize> = block.iter().copied().collect();
        let sample = rotation_sample(&mut counts, &owners, &exclude, cfg.sample_size, &mut rng);
        let (mut kept, mut post_ok, mut base_ok) = (0usize, 0usize, 0usize);
        for &s in &sample {
            let item = &pool[s];
            let before = base.get(item.input)?;
            let after = current.predict_label(item.input)?;
            kept += usize::from(after == before);
            post_ok += usize::from(item.gold.contains(&after));
            base_ok += usize::from(item.gold.contains(&before));
        }
        let retain_all = fraction(kept, sample.len());
        let delta_acc = (!sample.is_empty()).then(|| (post_ok as f64 - base_ok as f64) / sample.len() as f64);

        for (&i, (desired, skipped)) in block.iter().zip(targets) {
            let r = &records[i];
            let mut o = score_record(&current, &mut base, r, &desired)?;
            o.block = b;
            o.skipped = skipped;
            o.retain_all = retain_all;
            o.delta_acc = delta_acc;
            outcomes.push(o);
        }
    }
    let summary = UpdateSummary::from_outcomes(&outcomes, n_blocks);
    Ok(EvalResult { updater: updater.name(), config: cfg.clone(), outcomes, summary })
}

fn score_record<M: BeliefModel>(
    post: &M,
    base: &mut BaseCache<'_, M>,
    r: &BeliefRecord,
    desired: &TokenSeq,
) -> Result<UpdateOutcome> {
    let success_main = post.predict_label(&r.main_input)? == *desired;
    let mut hits = 0;
    for p in &r.paraphrases {
        hits += usize::from(post.predict_label(p)? == *desired);
    }
    let success_paraphrase = fraction(hits, r.paraphrases.len());
    let desired_true = desired.as_bool() == Some(true);
    let (mut hits, mut total) = (0, 0);
    for e in r.entailed.iter().filter(|e| !e.holds_only_if_main_true || desired_true) {
        total += 1;
        hits += usize::from(post.predict_label(&e.input)? == e.label);
    }
    let success_entailed = fraction(hits, total);
    let mut kept = 0;
    for n in &r.local_neutral {
        kept += usize::from(post.predict_label(&n.input)? == base.get(&n.input)?);
    }
    let retain_local_neutral = fraction(kept, r.local_neutral.len());
    Ok(UpdateOutcome {
        record_id: r.id.clone(),
        block: 0,
        desired: desired.clone(),
        skipped: false,
        success_main,
        success_paraphrase,
        success_entailed,
        retain_local_neutral,
        retain_all: None,
        delta_acc: None,
    })
}
