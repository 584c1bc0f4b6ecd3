use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{BeliefStore, TokenSeq, FALSE_LABEL, TRUE_LABEL};
use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const NUM_SPECIAL: usize = 3;
const SPECIALS: [&str; NUM_SPECIAL] = ["<bos>", "<eos>", "<sep>"];

/// Closed token vocabulary. Ordinary tokens are sorted so that id order is
/// lexicographic token order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut set: BTreeSet<String> = tokens.into_iter().collect();
        for s in SPECIALS {
            set.remove(s);
        }
        let all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Self::from(all)
    }

    /// Every token appearing anywhere in the given stores, plus the binary labels.
    pub fn from_stores(stores: &[&BeliefStore]) -> Self {
        let mut toks: Vec<String> = vec![TRUE_LABEL.into(), FALSE_LABEL.into()];
        let mut push = |s: &TokenSeq| toks.extend(s.tokens().iter().cloned());
        for store in stores {
            for r in store.records() {
                push(&r.main_input);
                r.gold_labels.iter().for_each(&mut push);
                r.paraphrases.iter().for_each(&mut push);
                for e in &r.entailed {
                    push(&e.input);
                    push(&e.label);
                }
                for n in &r.local_neutral {
                    push(&n.input);
                    n.gold_labels.iter().for_each(&mut push);
                }
            }
        }
        Self::from_tokens(toks)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, seq: &TokenSeq) -> Result<Vec<usize>> {
        seq.tokens().iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> TokenSeq {
        TokenSeq::new(ids.iter().map(|&i| self.tokens[i].clone()).collect())
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIAL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_lexicographic_order() {
        let v = Vocab::from_tokens(["b", "a", "c", "a"].map(String::from));
        assert_eq!(v.len(), NUM_SPECIAL + 3);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        assert_eq!(v.token(BOS), "<bos>");
        assert!(matches!(v.id("zz"), Err(Error::UnknownToken(t)) if t == "zz"));
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::from_tokens(["x", "y"].map(String::from));
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.decode(&back.encode(&"y x".into()).unwrap()).to_string(), "y x");
    }
}
