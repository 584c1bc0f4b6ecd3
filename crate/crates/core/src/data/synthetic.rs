//! Synthetic belief worlds.
//!
//! A world has entities, each belonging to a class. The answer for
//! `(entity, relation)` is the class default for that relation unless the
//! entity carries an exception. Inputs render as `class entity relation`
//! (seq2seq) or `class entity relation value` (binary claims). Paraphrases
//! swap in entity aliases and relation synonyms.
//!
//! Seq2seq records come in pairs about one entity under two relations with
//! different answers, and each is the other's local-neutral item. Binary
//! records may carry an entailed claim over the relation's grouped variant,
//! which follows from the main claim only when the main claim is true.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BeliefRecord, BeliefStore, EntailedItem, NeutralItem, Split, Task, TokenSeq};
use crate::error::{Error, Result};

pub const MAX_SYNTHETIC_VOCAB: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl RelationSpec {
    pub fn new(name: &str, aliases: &[&str]) -> Self {
        Self { name: name.into(), aliases: aliases.iter().map(|a| a.to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub task: Task,
    pub num_entities: usize,
    pub num_classes: usize,
    pub num_values: usize,
    pub relations: Vec<RelationSpec>,
    /// Alternative surface forms per entity, used for paraphrases.
    pub entity_aliases: usize,
    pub num_paraphrases_per_input: usize,
    pub fraction_with_entailment: f64,
    /// Probability that an entity's answer deviates from its class default.
    pub exception_rate: f64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            task: Task::Seq2seq,
            num_entities: 100,
            num_classes: 3,
            num_values: 12,
            relations: default_relations(),
            entity_aliases: 2,
            num_paraphrases_per_input: 4,
            fraction_with_entailment: 0.0,
            exception_rate: 0.3,
            train_fraction: 0.8,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Ten person relations, each with two synonyms.
pub fn default_relations() -> Vec<RelationSpec> {
    vec![
        RelationSpec::new("place_of_birth", &["birthplace", "born_in"]),
        RelationSpec::new("award_received", &["award", "honoured_with"]),
        RelationSpec::new("cause_of_death", &["died_of", "death_cause"]),
        RelationSpec::new("place_of_death", &["deathplace", "died_in"]),
        RelationSpec::new("place_of_burial", &["buried_in", "burial_site"]),
        RelationSpec::new("educated_at", &["alma_mater", "studied_at"]),
        RelationSpec::new("child", &["offspring", "child_of"]),
        RelationSpec::new("occupation", &["profession", "job"]),
        RelationSpec::new("spouse", &["married_to", "partner"]),
        RelationSpec::new("sibling", &["brother_or_sister", "sibling_of"]),
    ]
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.relations.is_empty() {
            return Err(Error::config("relations", "at least one relation is required"));
        }
        if self.task == Task::Seq2seq && self.relations.len() < 2 {
            return Err(Error::config("relations", "local-neutral pairing needs at least 2 relations"));
        }
        if self.num_entities == 0 {
            return Err(Error::config("num_entities", "must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be positive"));
        }
        if self.num_values < 2 {
            return Err(Error::config("num_values", "need at least 2 values"));
        }
        if !(0.0..=1.0).contains(&self.fraction_with_entailment) {
            return Err(Error::config("fraction_with_entailment", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.exception_rate) {
            return Err(Error::config("exception_rate", "must be in [0, 1]"));
        }
        if self.train_fraction < 0.0 || self.dev_fraction < 0.0 || self.train_fraction + self.dev_fraction > 1.0 {
            return Err(Error::config("train_fraction", "split fractions must be non-negative and sum to at most 1"));
        }
        let min_aliases = self.relations.iter().map(|r| r.aliases.len()).min().unwrap_or(0);
        let forms = (self.entity_aliases + 1) * (min_aliases + 1) - 1;
        if self.num_paraphrases_per_input > forms {
            return Err(Error::config(
                "num_paraphrases_per_input",
                format!("only {forms} distinct paraphrases available from aliases"),
            ));
        }
        let mut names = BTreeSet::new();
        for r in &self.relations {
            for n in std::iter::once(&r.name).chain(&r.aliases) {
                if n.split_whitespace().count() != 1 {
                    return Err(Error::config("relations", format!("relation form `{n}` must be a single token")));
                }
                if !names.insert(n.clone()) {
                    return Err(Error::config("relations", format!("relation form `{n}` is repeated")));
                }
            }
        }
        let vocab = self.vocabulary_size();
        if vocab > MAX_SYNTHETIC_VOCAB {
            return Err(Error::config(
                "num_entities",
                format!("world needs {vocab} symbols, more than the {MAX_SYNTHETIC_VOCAB} allowed"),
            ));
        }
        Ok(())
    }

    fn vocabulary_size(&self) -> usize {
        let relation_forms: usize = self.relations.iter().map(|r| 1 + r.aliases.len()).sum();
        let grouped = if self.task == Task::Binary { self.relations.len() + self.num_groups() } else { 0 };
        self.num_entities * (1 + self.entity_aliases) + self.num_classes + self.num_values + relation_forms + grouped + 2
    }

    fn num_groups(&self) -> usize {
        self.num_values.div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStores {
    pub train: BeliefStore,
    pub dev: BeliefStore,
    pub test: BeliefStore,
}

struct World<'a> {
    cfg: &'a SyntheticWorldConfig,
    class_of: Vec<usize>,
    answer: Vec<Vec<usize>>,
}

impl World<'_> {
    fn entity_form(&self, e: usize, alias: usize) -> String {
        if alias == 0 {
            format!("e{e}")
        } else {
            format!("e{e}_{alias}")
        }
    }

    fn relation_form(&self, r: usize, alias: usize) -> &str {
        let spec = &self.cfg.relations[r];
        if alias == 0 {
            &spec.name
        } else {
            &spec.aliases[alias - 1]
        }
    }

    fn class_token(&self, e: usize) -> String {
        format!("k{}", self.class_of[e])
    }

    fn value_token(v: usize) -> String {
        format!("v{v}")
    }

    fn group_of(&self, v: usize) -> usize {
        v % self.cfg.num_groups()
    }

    fn input(&self, e: usize, ea: usize, r: usize, ra: usize, value: Option<usize>) -> TokenSeq {
        let mut toks = vec![self.class_token(e), self.entity_form(e, ea), self.relation_form(r, ra).to_string()];
        if let Some(v) = value {
            toks.push(Self::value_token(v));
        }
        TokenSeq::new(toks)
    }

    fn paraphrases(&self, e: usize, r: usize, value: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<TokenSeq> {
        let n_rel_forms = 1 + self.cfg.relations[r].aliases.len();
        let mut forms: Vec<(usize, usize)> = (0..=self.cfg.entity_aliases)
            .flat_map(|ea| (0..n_rel_forms).map(move |ra| (ea, ra)))
            .filter(|&f| f != (0, 0))
            .collect();
        forms.shuffle(rng);
        forms
            .into_iter()
            .take(self.cfg.num_paraphrases_per_input)
            .map(|(ea, ra)| self.input(e, ea, r, ra, value))
            .collect()
    }
}

/// Deterministic in `cfg.seed`.
pub fn generate_synthetic_store(cfg: &SyntheticWorldConfig) -> Result<SyntheticStores> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_rel = cfg.relations.len();
    let class_default: Vec<Vec<usize>> =
        (0..cfg.num_classes).map(|_| (0..n_rel).map(|_| rng.random_range(0..cfg.num_values)).collect()).collect();
    let class_of: Vec<usize> = (0..cfg.num_entities).map(|_| rng.random_range(0..cfg.num_classes)).collect();
    let answer: Vec<Vec<usize>> = (0..cfg.num_entities)
        .map(|e| {
            (0..n_rel)
                .map(|r| {
                    if rng.random::<f64>() < cfg.exception_rate {
                        rng.random_range(0..cfg.num_values)
                    } else {
                        class_default[class_of[e]][r]
                    }
                })
                .collect()
        })
        .collect();
    let world = World { cfg, class_of, answer };

    // A unit is the set of records that must land in the same split.
    let mut units: Vec<Vec<BeliefRecord>> = match cfg.task {
        Task::Seq2seq => seq2seq_units(&world, &mut rng),
        Task::Binary => binary_units(&world, &mut rng),
    };
    units.shuffle(&mut rng);

    let n = units.len();
    let n_train = (cfg.train_fraction * n as f64).round() as usize;
    let n_dev = ((cfg.dev_fraction * n as f64).round() as usize).min(n - n_train.min(n));
    let mut split_records: [Vec<BeliefRecord>; 3] = Default::default();
    for (i, unit) in units.into_iter().enumerate() {
        let slot = if i < n_train {
            0
        } else if i < n_train + n_dev {
            1
        } else {
            2
        };
        split_records[slot].extend(unit);
    }
    let [train, dev, test] = split_records;
    let relabel = |records: Vec<BeliefRecord>, split: Split| -> Result<BeliefStore> {
        let records = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.id = format!("{split}-{i:05}");
                r
            })
            .collect();
        BeliefStore::new(records, split)
    };
    Ok(SyntheticStores {
        train: relabel(train, Split::Train)?,
        dev: relabel(dev, Split::Dev)?,
        test: relabel(test, Split::Test)?,
    })
}

fn seq2seq_units(world: &World<'_>, rng: &mut ChaCha8Rng) -> Vec<Vec<BeliefRecord>> {
    let cfg = world.cfg;
    let mut units = Vec::new();
    for e in 0..cfg.num_entities {
        let mut rels: Vec<usize> = (0..cfg.relations.len()).collect();
        rels.shuffle(rng);
        // Greedily pair relations whose answers differ.
        let mut pending: Vec<usize> = Vec::new();
        for r in rels {
            let partner = pending.iter().position(|&p| world.answer[e][p] != world.answer[e][r]);
            match partner {
                Some(idx) => {
                    let p = pending.remove(idx);
                    units.push(pair_records(world, e, p, r, rng));
                }
                None => pending.push(r),
            }
        }
    }
    units
}

fn pair_records(world: &World<'_>, e: usize, r1: usize, r2: usize, rng: &mut ChaCha8Rng) -> Vec<BeliefRecord> {
    let make = |main_r: usize, other_r: usize, rng: &mut ChaCha8Rng| BeliefRecord {
        id: String::new(),
        task: Task::Seq2seq,
        main_input: world.input(e, 0, main_r, 0, None),
        gold_labels: vec![TokenSeq::new(vec![World::value_token(world.answer[e][main_r])])],
        paraphrases: world.paraphrases(e, main_r, None, rng),
        entailed: vec![],
        local_neutral: vec![NeutralItem {
            input: world.input(e, 0, other_r, 0, None),
            gold_labels: vec![TokenSeq::new(vec![World::value_token(world.answer[e][other_r])])],
        }],
    };
    let a = make(r1, r2, rng);
    let b = make(r2, r1, rng);
    vec![a, b]
}

fn binary_units(world: &World<'_>, rng: &mut ChaCha8Rng) -> Vec<Vec<BeliefRecord>> {
    let cfg = world.cfg;
    let mut units = Vec::new();
    for e in 0..cfg.num_entities {
        for r in 0..cfg.relations.len() {
            let truth = world.answer[e][r];
            let claim_true = rng.random::<bool>();
            let value = if claim_true {
                truth
            } else {
                let wrong: Vec<usize> = (0..cfg.num_values).filter(|&v| v != truth).collect();
                *wrong.choose(rng).expect("num_values >= 2")
            };
            let paraphrases = world.paraphrases(e, r, Some(value), rng);
            let mut entailed = Vec::new();
            if rng.random::<f64>() < cfg.fraction_with_entailment {
                // If `e r value` holds, then `e r_group group(value)` holds and
                // every other group is false.
                let group = world.group_of(value);
                let (claim_group, label) = if rng.random::<bool>() {
                    (group, true)
                } else {
                    let others: Vec<usize> = (0..cfg.num_groups()).filter(|&g| g != group).collect();
                    match others.choose(rng) {
                        Some(&g) => (g, false),
                        None => (group, true),
                    }
                };
                entailed.push(EntailedItem {
                    input: TokenSeq::new(vec![
                        world.class_token(e),
                        world.entity_form(e, 0),
                        format!("{}_group", cfg.relations[r].name),
                        format!("g{claim_group}"),
                    ]),
                    label: TokenSeq::binary(label),
                    holds_only_if_main_true: true,
                });
            }
            units.push(vec![BeliefRecord {
                id: String::new(),
                task: Task::Binary,
                main_input: world.input(e, 0, r, 0, Some(value)),
                gold_labels: vec![TokenSeq::binary(claim_true)],
                paraphrases,
                entailed,
                local_neutral: vec![],
            }]);
        }
    }
    units
}
