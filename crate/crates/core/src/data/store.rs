use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{FALSE_LABEL, TRUE_LABEL};
use crate::error::{Error, Result};

/// A whitespace-tokenised sequence. Serialised as a single space-joined
/// string, so equality is exact match after whitespace normalisation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn parse(text: &str) -> Self {
        Self(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn binary(value: bool) -> Self {
        Self::parse(if value { TRUE_LABEL } else { FALSE_LABEL })
    }

    /// `Some(true)` / `Some(false)` for the binary labels.
    pub fn as_bool(&self) -> Option<bool> {
        match self.0.as_slice() {
            [t] if t == TRUE_LABEL => Some(true),
            [t] if t == FALSE_LABEL => Some(false),
            _ => None,
        }
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl From<&str> for TokenSeq {
    fn from(s: &str) -> Self {
        Self::parse(s)
    }
}

impl Serialize for TokenSeq {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TokenSeq {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Self::parse(&s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Seq2seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailedItem {
    pub input: TokenSeq,
    pub label: TokenSeq,
    /// The entailment holds only when the main input is true.
    pub holds_only_if_main_true: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralItem {
    pub input: TokenSeq,
    pub gold_labels: Vec<TokenSeq>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefRecord {
    pub id: String,
    pub task: Task,
    pub main_input: TokenSeq,
    pub gold_labels: Vec<TokenSeq>,
    #[serde(default)]
    pub paraphrases: Vec<TokenSeq>,
    #[serde(default)]
    pub entailed: Vec<EntailedItem>,
    #[serde(default)]
    pub local_neutral: Vec<NeutralItem>,
}

impl BeliefRecord {
    /// First gold label; used as the training target.
    pub fn canonical_label(&self) -> &TokenSeq {
        &self.gold_labels[0]
    }

    pub fn is_correct(&self, prediction: &TokenSeq) -> bool {
        self.gold_labels.contains(prediction)
    }

    /// Main input plus paraphrases forms a group of at least two inputs.
    /// Records without one stay in the store but consistency metrics skip them.
    pub fn has_paraphrase_group(&self) -> bool {
        !self.paraphrases.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gold_labels.is_empty() {
            return Err(Error::Validation(format!("record `{}`: gold_labels is empty", self.id)));
        }
        if self.main_input.is_empty() {
            return Err(Error::Validation(format!("record `{}`: main_input is empty", self.id)));
        }
        if self.task == Task::Binary {
            if self.gold_labels.len() != 1 || self.gold_labels[0].as_bool().is_none() {
                return Err(Error::Validation(format!(
                    "record `{}`: binary records need exactly one of {TRUE_LABEL}/{FALSE_LABEL}",
                    self.id
                )));
            }
            for e in &self.entailed {
                if e.label.as_bool().is_none() {
                    return Err(Error::Validation(format!(
                        "record `{}`: entailed label `{}` is not binary",
                        self.id, e.label
                    )));
                }
            }
        }
        for n in &self.local_neutral {
            if n.gold_labels.is_empty() {
                return Err(Error::Validation(format!("record `{}`: local-neutral item without labels", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefStore {
    records: Vec<BeliefRecord>,
    split: Split,
    label_vocabulary: BTreeSet<TokenSeq>,
}

impl BeliefStore {
    pub fn new(records: Vec<BeliefRecord>, split: Split) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut task = None;
        for r in &records {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id `{}`", r.id)));
            }
            match task {
                None => task = Some(r.task),
                Some(t) if t != r.task => {
                    return Err(Error::Validation(format!("record `{}` mixes tasks within one store", r.id)))
                }
                _ => {}
            }
        }
        let mut label_vocabulary: BTreeSet<TokenSeq> =
            records.iter().flat_map(|r| r.gold_labels.iter().cloned()).collect();
        if task == Some(Task::Binary) {
            label_vocabulary.insert(TokenSeq::binary(true));
            label_vocabulary.insert(TokenSeq::binary(false));
        }
        Ok(Self { records, split, label_vocabulary })
    }

    pub fn records(&self) -> &[BeliefRecord] {
        &self.records
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn label_vocabulary(&self) -> &BTreeSet<TokenSeq> {
        &self.label_vocabulary
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `None` for an empty store.
    pub fn task(&self) -> Option<Task> {
        self.records.first().map(|r| r.task)
    }

    pub fn has_entailed(&self) -> bool {
        self.records.iter().any(|r| !r.entailed.is_empty())
    }

    pub fn has_local_neutral(&self) -> bool {
        self.records.iter().any(|r| !r.local_neutral.is_empty())
    }

    pub fn has_paraphrases(&self) -> bool {
        self.records.iter().any(|r| r.has_paraphrase_group())
    }

    /// Sub-store with the first `n` records.
    pub fn truncated(&self, n: usize) -> Self {
        let records = self.records.iter().take(n).cloned().collect();
        Self::new(records, self.split).expect("subset of a valid store is valid")
    }

    pub fn load_jsonl(path: &Path, split: Split) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(BufReader::new(file), split)
    }

    pub fn read_jsonl<R: BufRead>(reader: R, split: Split) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: BeliefRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            records.push(record);
        }
        Self::new(records, split)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
