use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BeliefRecord, Task, TokenSeq};
use crate::error::{Error, Result};

/// How update targets are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPolicy {
    /// Gold label when the prediction is wrong, otherwise a random other
    /// label from the vocabulary. Binary tasks always flip.
    Hard,
    /// A beam-search alternative to the current prediction.
    Beam,
}

/// Picks the desired output `y*` for an update. Never returns
/// `current_prediction`.
pub fn draw_update_label<R: Rng + ?Sized>(
    record: &BeliefRecord,
    current_prediction: &TokenSeq,
    policy: LabelPolicy,
    label_vocabulary: &BTreeSet<TokenSeq>,
    rng: &mut R,
    beam_candidates: Option<&[TokenSeq]>,
) -> Result<TokenSeq> {
    if record.task == Task::Binary {
        let value = current_prediction
            .as_bool()
            .ok_or_else(|| Error::Invalid(format!("binary prediction `{current_prediction}` is not True/False")))?;
        return Ok(TokenSeq::binary(!value));
    }
    match policy {
        LabelPolicy::Hard => {
            if !record.is_correct(current_prediction) {
                return Ok(record.canonical_label().clone());
            }
            let others: Vec<&TokenSeq> = label_vocabulary.iter().filter(|l| *l != current_prediction).collect();
            others
                .choose(rng)
                .map(|l| (*l).clone())
                .ok_or_else(|| Error::DegenerateVocabulary(current_prediction.to_string()))
        }
        LabelPolicy::Beam => {
            let beam = beam_candidates
                .filter(|b| !b.is_empty())
                .ok_or_else(|| Error::Invalid("beam policy needs non-empty beam candidates".into()))?;
            let others: Vec<&TokenSeq> = beam.iter().filter(|l| *l != current_prediction).collect();
            others
                .choose(rng)
                .map(|l| (*l).clone())
                .ok_or_else(|| Error::DegenerateVocabulary(current_prediction.to_string()))
        }
    }
}
