use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langgraph::LanguageSceneGraph;
use crate::semgraph::ImageSemanticGraph;

/// Modality weights and relation evidence for one language edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeState {
    pub subject: u32,
    pub object: u32,
    pub relation: String,
    pub beta_look: f64,
    pub beta_loc: f64,
    /// Absent when the relation path is disabled.
    pub beta_rel: Option<f64>,
    /// Relation attention aligned with [`ReasoningTrace::image_edges`].
    pub gamma: Vec<f64>,
    /// Per-edge map before merging.
    pub attention: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node: u32,
    pub attention: Vec<f64>,
    /// Set for leaves; intermediate nodes carry their weights per edge.
    pub beta_look: Option<f64>,
    pub beta_loc: Option<f64>,
    pub edges: Vec<EdgeState>,
}

/// Everything a forward pass computed, in processing order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub order: Vec<u32>,
    pub nodes: Vec<NodeState>,
    /// `(target, source)` pairs of the image graph.
    pub image_edges: Vec<(usize, usize)>,
    pub referent: u32,
    pub p: Vec<f64>,
}

impl ReasoningTrace {
    pub fn state(&self, node: u32) -> Option<&NodeState> {
        self.nodes.iter().find(|s| s.node == node)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Language graph in DOT, each node labelled with its three most attended objects.
    pub fn to_dot(&self, gl: &LanguageSceneGraph, go: &ImageSemanticGraph) -> Result<String> {
        let mut s = String::from("digraph reasoning {\n  rankdir=BT;\n");
        for n in gl.nodes() {
            let st = self
                .state(n.id)
                .ok_or_else(|| Error::Usage(format!("trace has no state for node {}", n.id)))?;
            let mut ranked: Vec<(usize, f64)> = st.attention.iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let top: Vec<String> = ranked
                .iter()
                .take(3)
                .map(|(i, w)| {
                    let id = go.objects().get(*i).map(|o| o.id).unwrap_or(*i as u32);
                    format!("obj {id}: {w:.3}")
                })
                .collect();
            // referent blue, intermediate nodes amber, leaves green
            let (shape, color) = if n.id == self.referent {
                ("doublecircle", "lightblue")
            } else if st.edges.is_empty() {
                ("ellipse", "palegreen")
            } else {
                ("ellipse", "khaki")
            };
            let _ = writeln!(
                s,
                "  n{} [shape={shape}, style=filled, fillcolor={color}, label=\"{}\\n{}\"];",
                n.id,
                n.words.join(" "),
                top.join("\\n")
            );
        }
        for e in gl.edges() {
            let _ = writeln!(
                s,
                "  n{} -> n{} [label=\"{}\"];",
                e.object,
                e.subject,
                e.relation.join(" ")
            );
        }
        s.push_str("}\n");
        Ok(s)
    }
}
