use serde::{Deserialize, Serialize};

use crate::data::{BeliefRecord, BeliefStore, TokenSeq};
use crate::error::{Error, Result};
use crate::update::BeliefModel;

/// Mean over groups of the fraction of agreeing unordered pairs. Groups with
/// fewer than two members are skipped.
pub fn paraphrase_consistency<T: Eq>(groups: &[Vec<T>]) -> Result<f64> {
    let scores: Vec<f64> = groups.iter().filter_map(|g| group_consistency(g)).collect();
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("no paraphrase group has two or more members".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn group_consistency<T: Eq>(group: &[T]) -> Option<f64> {
    let m = group.len();
    if m < 2 {
        return None;
    }
    let mut agree = 0usize;
    for i in 0..m {
        for j in i + 1..m {
            agree += usize::from(group[i] == group[j]);
        }
    }
    Some(agree as f64 / (m * (m - 1) / 2) as f64)
}

/// Model predictions for one record: main input, paraphrases, entailed items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPredictions {
    pub main: TokenSeq,
    pub paraphrases: Vec<TokenSeq>,
    pub entailed: Vec<TokenSeq>,
}

impl RecordPredictions {
    pub fn collect<M: BeliefModel>(model: &M, record: &BeliefRecord) -> Result<Self> {
        Ok(Self {
            main: model.predict_label(&record.main_input)?,
            paraphrases: record.paraphrases.iter().map(|p| model.predict_label(p)).collect::<Result<_>>()?,
            entailed: record.entailed.iter().map(|e| model.predict_label(&e.input)).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDetection {
    pub id: String,
    pub main_correct: bool,
    pub paraphrase_consistency: Option<f64>,
    /// Per entailed item: prediction matches its label.
    pub entailed_correct: Vec<bool>,
}

/// Belief-detection metrics. `None` marks a metric with no qualifying data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefReport {
    pub paraphrase_consistency: Option<f64>,
    pub entailment_acc: Option<f64>,
    pub contrapositive_acc: Option<f64>,
    pub records: Vec<RecordDetection>,
}

/// Builds the report from precomputed predictions, one entry per record.
pub fn belief_report_from_predictions(records: &[BeliefRecord], preds: &[RecordPredictions]) -> Result<BeliefReport> {
    if records.len() != preds.len() {
        return Err(Error::Invalid(format!("{} records but {} prediction sets", records.len(), preds.len())));
    }
    let mut groups = Vec::new();
    let mut details = Vec::with_capacity(records.len());
    let (mut ent_hits, mut ent_total) = (0usize, 0usize);
    let (mut contra_hits, mut contra_total) = (0usize, 0usize);
    for (r, p) in records.iter().zip(preds) {
        if p.paraphrases.len() != r.paraphrases.len() || p.entailed.len() != r.entailed.len() {
            return Err(Error::Invalid(format!("prediction shape differs from record `{}`", r.id)));
        }
        let main_correct = r.is_correct(&p.main);
        let group: Vec<&TokenSeq> = std::iter::once(&p.main).chain(&p.paraphrases).collect();
        let consistency = group_consistency(&group);
        if consistency.is_some() {
            groups.push(group);
        }
        let main_true = r.canonical_label().as_bool() == Some(true);
        let mut entailed_correct = Vec::with_capacity(r.entailed.len());
        for (item, pred) in r.entailed.iter().zip(&p.entailed) {
            let ok = *pred == item.label;
            entailed_correct.push(ok);
            if main_correct && (!item.holds_only_if_main_true || main_true) {
                ent_total += 1;
                ent_hits += usize::from(ok);
            }
            if !ok {
                contra_total += 1;
                contra_hits += usize::from(p.main.as_bool() == Some(false));
            }
        }
        details.push(RecordDetection {
            id: r.id.clone(),
            main_correct,
            paraphrase_consistency: consistency,
            entailed_correct,
        });
    }
    let ratio = |h: usize, t: usize| (t > 0).then(|| h as f64 / t as f64);
    Ok(BeliefReport {
        paraphrase_consistency: paraphrase_consistency(&groups).ok(),
        entailment_acc: ratio(ent_hits, ent_total),
        contrapositive_acc: ratio(contra_hits, contra_total),
        records: details,
    })
}

pub fn belief_report<M: BeliefModel>(model: &M, store: &BeliefStore) -> Result<BeliefReport> {
    let preds = store.records().iter().map(|r| RecordPredictions::collect(model, r)).collect::<Result<Vec<_>>>()?;
    belief_report_from_predictions(store.records(), &preds)
}
