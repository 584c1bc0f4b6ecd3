//! Belief graphs: which predictions flip when one belief is updated.

mod export;

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{BeliefStore, Task, TokenSeq};
use crate::editor::EditRequest;
use crate::error::{Error, Result};
use crate::update::{BeliefModel, Updater};

pub use export::{export_graph, import_graph_json, write_graph, GraphFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Main,
    Entailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    pub input: TokenSeq,
    pub gold: TokenSeq,
    /// Prediction before any update.
    pub prediction: TokenSeq,
    pub correct: bool,
    /// Updating this node left its own prediction unchanged.
    pub flip_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub updater: String,
    pub model_id: String,
}

/// Nodes plus directed edges `u -> v`: updating `u` flipped `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeliefGraph {
    pub nodes: Vec<GraphNode>,
    edges: BTreeSet<(usize, usize)>,
    pub provenance: Provenance,
}

impl BeliefGraph {
    /// Errors on self edges and out-of-range endpoints.
    pub fn new(nodes: Vec<GraphNode>, edges: impl IntoIterator<Item = (usize, usize)>, provenance: Provenance) -> Result<Self> {
        let n = nodes.len();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Invalid(format!("edge ({u}, {v}) leaves a {n}-node graph")));
            }
            if u == v {
                return Err(Error::Invalid(format!("self edge on node {u}")));
            }
            set.insert((u, v));
        }
        Ok(Self { nodes, edges: set, provenance })
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u, v))
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        self.edges.iter().for_each(|&(u, _)| d[u] += 1);
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        self.edges.iter().for_each(|&(_, v)| d[v] += 1);
        d
    }

    /// Per node, how many of its out-neighbours were correct before the update.
    pub fn corrupted_counts(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        self.edges.iter().filter(|&&(_, v)| self.nodes[v].correct).for_each(|&(u, _)| d[u] += 1);
        d
    }
}

/// A fresh node list for `store`: main inputs, then each record's entailed
/// items, with base-model predictions.
pub fn graph_nodes<M: BeliefModel>(model: &M, store: &BeliefStore) -> Result<Vec<GraphNode>> {
    let mut nodes = Vec::new();
    for r in store.records() {
        let mut push = |id: String, kind, input: &TokenSeq, gold: &TokenSeq| -> Result<()> {
            let prediction = model.predict_label(input)?;
            let correct = prediction == *gold;
            nodes.push(GraphNode { id, kind, input: input.clone(), gold: gold.clone(), prediction, correct, flip_failed: false });
            Ok(())
        };
        push(r.id.clone(), NodeKind::Main, &r.main_input, r.canonical_label())?;
        for (j, e) in r.entailed.iter().enumerate() {
            push(format!("{}#e{j}", r.id), NodeKind::Entailed, &e.input, &e.label)?;
        }
    }
    Ok(nodes)
}

#[derive(Debug, Clone, Default)]
pub struct GraphBuildOptions {
    /// Append-only record of finished nodes; existing entries are reused.
    pub journal: Option<std::path::PathBuf>,
    pub model_id: String,
    /// Worker threads, each owning its own model copy. Zero means one.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct JournalHeader {
    nodes: usize,
    updater: String,
    model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct JournalEntry {
    node: usize,
    flip_failed: bool,
    flipped: Vec<usize>,
}

fn node_result<M: BeliefModel, U: Updater<M> + ?Sized>(
    model: &M,
    updater: &U,
    nodes: &[GraphNode],
    u: usize,
) -> Result<JournalEntry> {
    let node = &nodes[u];
    let opposite = TokenSeq::binary(node.prediction.as_bool() != Some(true));
    let req = EditRequest::new(node.input.clone(), node.prediction.clone(), opposite.clone())?;
    let post = updater.update(model, &req)?;
    let flip_failed = post.predict_label(&node.input)? != opposite;
    let mut flipped = Vec::new();
    for (v, other) in nodes.iter().enumerate() {
        if v != u && post.predict_label(&other.input)? != other.prediction {
            flipped.push(v);
        }
    }
    Ok(JournalEntry { node: u, flip_failed, flipped })
}

fn read_journal(path: &Path, header: &JournalHeader) -> Result<Vec<JournalEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let Some(first) = lines.next() else { return Ok(Vec::new()) };
    let found: JournalHeader = serde_json::from_str(&first?)?;
    if found != *header {
        return Err(Error::Invalid(format!("journal {} belongs to a different build", path.display())));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        // A torn final line from an interrupted run is dropped and redone.
        match serde_json::from_str::<JournalEntry>(&line) {
            Ok(e) if e.node < header.nodes => out.push(e),
            _ => warn!("journal line {} unreadable; node will be rebuilt", i + 2),
        }
    }
    Ok(out)
}

/// Updates each node to the opposite of its base prediction and records an
/// edge to every other node whose prediction changes. Every update starts
/// from `model` itself, so no state carries over between nodes.
pub fn build_belief_graph<M, U>(model: &M, updater: &U, store: &BeliefStore, opts: &GraphBuildOptions) -> Result<BeliefGraph>
where
    M: BeliefModel + Send + Sync,
    U: Updater<M> + Sync + ?Sized,
{
    if store.task() != Some(Task::Binary) || model.task() != Task::Binary {
        return Err(Error::Invalid("belief graphs need a binary task and store".into()));
    }
    updater.check_compatible(model)?;
    let mut nodes = graph_nodes(model, store)?;
    let header = JournalHeader { nodes: nodes.len(), updater: updater.name(), model_id: opts.model_id.clone() };

    let mut results: Vec<Option<JournalEntry>> = vec![None; nodes.len()];
    let mut journal = None;
    if let Some(path) = &opts.journal {
        let resumed = if path.exists() { read_journal(path, &header)? } else { Vec::new() };
        for e in resumed {
            let slot = e.node;
            results[slot] = Some(e);
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if f.metadata()?.len() == 0 {
            writeln!(f, "{}", serde_json::to_string(&header)?)?;
        }
        journal = Some(f);
    }

    let todo: Vec<usize> = (0..nodes.len()).filter(|&u| results[u].is_none()).collect();
    let threads = opts.threads.max(1);
    for chunk in todo.chunks(threads * 4) {
        let computed: Vec<Result<JournalEntry>> = if threads == 1 {
            chunk.iter().map(|&u| node_result(model, updater, &nodes, u)).collect()
        } else {
            std::thread::scope(|s| {
                let nodes = &nodes;
                let handles: Vec<_> = chunk
                    .chunks(chunk.len().div_ceil(threads))
                    .map(|part| {
                        let local = model.clone();
                        s.spawn(move || part.iter().map(|&u| node_result(&local, updater, nodes, u)).collect::<Vec<_>>())
                    })
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("graph worker panicked")).collect()
            })
        };
        for entry in computed {
            let entry = entry?;
            if let Some(f) = journal.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&entry)?)?;
                f.flush()?;
            }
            let slot = entry.node;
            results[slot] = Some(entry);
        }
    }

    let mut edges = Vec::new();
    for entry in results.into_iter().map(|e| e.expect("every node built")) {
        if entry.flip_failed {
            warn!("update failed to flip node `{}`", nodes[entry.node].id);
        }
        nodes[entry.node].flip_failed = entry.flip_failed;
        edges.extend(entry.flipped.into_iter().map(|v| (entry.node, v)));
    }
    BeliefGraph::new(nodes, edges, Provenance { updater: header.updater, model_id: header.model_id })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub pct_edgeless: f64,
    pub in_edges_p95: usize,
    pub out_edges_p95: usize,
    pub corrupted_p95: usize,
    /// `None` when no chained pair of edges exists.
    pub pct_update_transitivity: Option<f64>,
    pub num_flip_failures: usize,
}

/// Smallest value covering at least 95% of `counts`.
pub fn nearest_rank_p95(counts: &[usize]) -> usize {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let rank = (0.95 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn graph_stats(g: &BeliefGraph) -> Result<GraphStats> {
    if g.is_empty() {
        return Err(Error::Empty("graph has no nodes".into()));
    }
    let (ins, outs) = (g.in_degrees(), g.out_degrees());
    let edgeless = ins.iter().zip(&outs).filter(|(i, o)| **i == 0 && **o == 0).count();
    Ok(GraphStats {
        num_nodes: g.len(),
        num_edges: g.edges.len(),
        pct_edgeless: 100.0 * edgeless as f64 / g.len() as f64,
        in_edges_p95: nearest_rank_p95(&ins),
        out_edges_p95: nearest_rank_p95(&outs),
        corrupted_p95: nearest_rank_p95(&g.corrupted_counts()),
        pct_update_transitivity: {
            let (closed, total) = transitivity_counts(g, None);
            (total > 0).then(|| 100.0 * closed as f64 / total as f64)
        },
        num_flip_failures: g.nodes.iter().filter(|n| n.flip_failed).count(),
    })
}

/// Among distinct `(a, b, c)` with `a -> b` and `b -> c`, the fraction with
/// `a -> c`. With `sample`, only triples inside that node subset count.
pub fn update_transitivity(g: &BeliefGraph, sample: Option<&[usize]>) -> Option<f64> {
    let (closed, total) = transitivity_counts(g, sample);
    (total > 0).then(|| closed as f64 / total as f64)
}

/// `(closed, total)` chained triples.
fn transitivity_counts(g: &BeliefGraph, sample: Option<&[usize]>) -> (usize, usize) {
    let keep: Option<HashSet<usize>> = sample.map(|s| s.iter().copied().collect());
    let inside = |v: usize| keep.as_ref().is_none_or(|k| k.contains(&v));
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); g.len()];
    for &(u, v) in &g.edges {
        if inside(u) && inside(v) {
            out[u].push(v);
        }
    }
    let (mut closed, mut total) = (0usize, 0usize);
    for (a, bs) in out.iter().enumerate() {
        for &b in bs {
            for &c in &out[b] {
                if c != a {
                    total += 1;
                    closed += usize::from(g.has_edge(a, c));
                }
            }
        }
    }
    (closed, total)
}
