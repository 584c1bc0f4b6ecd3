use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BeliefGraph, GraphNode, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Dot,
    Graphml,
    Json,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(Self::Dot),
            "graphml" => Ok(Self::Graphml),
            "json" => Ok(Self::Json),
            other => Err(Error::config("format", format!("unsupported graph format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    format: String,
    provenance: Provenance,
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
}

const JSON_TAG: &str = "belief-graph/1";

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `g`; nodes in index order, edges sorted.
pub fn write_graph(g: &BeliefGraph, format: GraphFormat) -> Result<String> {
    let mut s = String::new();
    match format {
        GraphFormat::Dot => {
            s.push_str("digraph belief_graph {\n");
            for (i, n) in g.nodes.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "  n{i} [id=\"{}\", label=\"{}\", gold=\"{}\", correct={}, flip_failed={}];",
                    dot_escape(&n.id),
                    dot_escape(&n.input.to_string()),
                    dot_escape(&n.gold.to_string()),
                    n.correct,
                    n.flip_failed
                );
            }
            for (u, v) in g.edges() {
                let _ = writeln!(s, "  n{u} -> n{v};");
            }
            s.push_str("}\n");
        }
        GraphFormat::Graphml => {
            s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
            for (key, ty) in [("record", "string"), ("label", "string"), ("gold", "string"), ("correct", "boolean"), ("flip_failed", "boolean")] {
                let _ = writeln!(s, "  <key id=\"{key}\" for=\"node\" attr.name=\"{key}\" attr.type=\"{ty}\"/>");
            }
            s.push_str("  <graph id=\"belief_graph\" edgedefault=\"directed\">\n");
            for (i, n) in g.nodes.iter().enumerate() {
                let _ = writeln!(s, "    <node id=\"n{i}\">");
                for (key, value) in [
                    ("record", n.id.clone()),
                    ("label", n.input.to_string()),
                    ("gold", n.gold.to_string()),
                    ("correct", n.correct.to_string()),
                    ("flip_failed", n.flip_failed.to_string()),
                ] {
                    let _ = writeln!(s, "      <data key=\"{key}\">{}</data>", xml_escape(&value));
                }
                s.push_str("    </node>\n");
            }
            for (u, v) in g.edges() {
                let _ = writeln!(s, "    <edge source=\"n{u}\" target=\"n{v}\"/>");
            }
            s.push_str("  </graph>\n</graphml>\n");
        }
        GraphFormat::Json => {
            let file = GraphFile {
                format: JSON_TAG.into(),
                provenance: g.provenance.clone(),
                nodes: g.nodes.clone(),
                edges: g.edges().iter().copied().collect(),
            };
            s = serde_json::to_string_pretty(&file)?;
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn export_graph(g: &BeliefGraph, format: GraphFormat, path: &Path) -> Result<()> {
    std::fs::write(path, write_graph(g, format)?)?;
    Ok(())
}

/// Reads a JSON export back, re-checking the edge invariants.
pub fn import_graph_json(text: &str) -> Result<BeliefGraph> {
    let file: GraphFile = serde_json::from_str(text)?;
    if file.format != JSON_TAG {
        return Err(Error::Invalid(format!("unknown graph file format `{}`", file.format)));
    }
    BeliefGraph::new(file.nodes, file.edges, file.provenance)
}
