//! JSON interchange for externally parsed language scene graphs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LanguageSceneGraph, PhraseNode, RelationEdge};
use crate::error::{Error, Result};
use crate::numkernel::write_atomic;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeNode {
    pub id: u32,
    pub phrase: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeEdge {
    pub subject: u32,
    pub relation: String,
    pub object: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeGraph {
    pub expression: String,
    pub nodes: Vec<InterchangeNode>,
    pub edges: Vec<InterchangeEdge>,
    pub referent: u32,
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

impl From<&LanguageSceneGraph> for InterchangeGraph {
    fn from(g: &LanguageSceneGraph) -> Self {
        InterchangeGraph {
            expression: g.expression().to_string(),
            nodes: g
                .nodes()
                .iter()
                .map(|n| InterchangeNode {
                    id: n.id,
                    phrase: n.words.join(" "),
                })
                .collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| InterchangeEdge {
                    subject: e.subject,
                    relation: e.relation.join(" "),
                    object: e.object,
                })
                .collect(),
            referent: g.referent(),
        }
    }
}

impl InterchangeGraph {
    /// Validates and converts; every failure is a load error naming the rule.
    pub fn into_graph(self) -> Result<LanguageSceneGraph> {
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| PhraseNode {
                id: n.id,
                words: words(&n.phrase),
            })
            .collect();
        let edges = self
            .edges
            .into_iter()
            .map(|e| RelationEdge {
                subject: e.subject,
                object: e.object,
                relation: words(&e.relation),
            })
            .collect();
        let g = LanguageSceneGraph::new(self.expression, nodes, edges).map_err(|e| match e {
            Error::Structure(m) => Error::Load(format!("structure rule: {m}")),
            Error::Validation(m) => Error::Load(format!("schema rule: {m}")),
            other => other,
        })?;
        if g.referent() != self.referent {
            return Err(Error::Load(format!(
                "referent rule: stored referent {} but the zero out-degree node is {}",
                self.referent,
                g.referent()
            )));
        }
        Ok(g)
    }

    /// Canonical text form: pretty JSON in declaration field order, newline-terminated.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("interchange graph serializes");
        s.push('\n');
        s
    }
}

pub fn graph_from_json(text: &str) -> Result<LanguageSceneGraph> {
    let raw: InterchangeGraph =
        serde_json::from_str(text).map_err(|e| Error::Load(format!("schema rule: {e}")))?;
    raw.into_graph()
}

pub fn graph_to_json(g: &LanguageSceneGraph) -> String {
    InterchangeGraph::from(g).to_canonical_json()
}

pub fn load_graph(path: &Path) -> Result<LanguageSceneGraph> {
    let text = std::fs::read_to_string(path)?;
    graph_from_json(&text)
}

pub fn save_graph(g: &LanguageSceneGraph, path: &Path) -> Result<()> {
    write_atomic(path, graph_to_json(g).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langgraph::{parse_expression, Grammar};
    use proptest::prelude::*;

    const STAR: &str = r#"{
  "expression": "the cup near the plate and left of a lamp",
  "nodes": [
    {
      "id": 0,
      "phrase": "cup"
    },
    {
      "id": 1,
      "phrase": "plate"
    },
    {
      "id": 2,
      "phrase": "lamp"
    }
  ],
  "edges": [
    {
      "subject": 0,
      "relation": "near",
      "object": 1
    },
    {
      "subject": 0,
      "relation": "left of",
      "object": 2
    }
  ],
  "referent": 0
}
"#;

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let g = graph_from_json(STAR).unwrap();
        assert_eq!(graph_to_json(&g), STAR);

        let dir = tempdir();
        let p = dir.join("g.json");
        save_graph(&g, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), STAR);
        assert_eq!(load_graph(&p).unwrap(), g);
        std::fs::remove_dir_all(dir).ok();
    }

    fn tempdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("sgmn-interchange-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn parsed_graph_round_trips() {
        let g =
            parse_expression("the girl in blue smock across the table", &Grammar::desk()).unwrap();
        assert_eq!(graph_from_json(&graph_to_json(&g)).unwrap(), g);
    }

    fn corrupt(mut v: serde_json::Value, f: impl FnOnce(&mut serde_json::Value)) -> String {
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn rule_violations_named() {
        let base: serde_json::Value = serde_json::from_str(STAR).unwrap();
        let two_roots = corrupt(base.clone(), |v| {
            v["edges"].as_array_mut().unwrap().pop();
        });
        let err = graph_from_json(&two_roots).unwrap_err();
        assert!(
            matches!(err, Error::Load(ref m) if m.contains("structure rule")),
            "{err}"
        );

        let cycle = corrupt(base.clone(), |v| {
            v["edges"] = serde_json::json!([
                {"subject": 0, "relation": "near", "object": 1},
                {"subject": 1, "relation": "near", "object": 0},
                {"subject": 0, "relation": "near", "object": 2}
            ]);
        });
        let err = graph_from_json(&cycle).unwrap_err();
        assert!(
            err.to_string().contains("cycle") || err.to_string().contains("zero out-degree"),
            "{err}"
        );

        let wrong_ref = corrupt(base.clone(), |v| v["referent"] = 2.into());
        assert!(graph_from_json(&wrong_ref)
            .unwrap_err()
            .to_string()
            .contains("referent rule"));

        let missing = corrupt(base, |v| {
            v.as_object_mut().unwrap().remove("nodes");
        });
        assert!(graph_from_json(&missing)
            .unwrap_err()
            .to_string()
            .contains("schema rule"));
    }

    #[test]
    fn pure_cycle_rejected() {
        let text = r#"{"expression":"","nodes":[{"id":0,"phrase":"a"},{"id":1,"phrase":"b"}],
            "edges":[{"subject":0,"relation":"near","object":1},{"subject":1,"relation":"near","object":0}],
            "referent":0}"#;
        assert!(matches!(graph_from_json(text), Err(Error::Load(_))));
    }

    fn arb_file() -> impl Strategy<Value = String> {
        let node = (
            0u32..6,
            prop::sample::select(vec!["cup", "red cup", "", "Cup", "a  b", "lamp"]),
        );
        let edge = (
            0u32..6,
            prop::sample::select(vec!["near", "left of", "", "On"]),
            0u32..6,
        );
        (
            prop::collection::vec(node, 0..6),
            prop::collection::vec(edge, 0..7),
            0u32..6,
        )
            .prop_map(|(nodes, edges, referent)| {
                serde_json::json!({
                    "expression": "x",
                    "nodes": nodes.iter().map(|(id, p)| serde_json::json!({"id": id, "phrase": p})).collect::<Vec<_>>(),
                    "edges": edges.iter().map(|(s, r, o)| serde_json::json!({"subject": s, "relation": r, "object": o})).collect::<Vec<_>>(),
                    "referent": referent,
                })
                .to_string()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn accepted_graphs_satisfy_invariants(text in arb_file()) {
            if let Ok(g) = graph_from_json(&text) {
                let ids: Vec<u32> = g.nodes().iter().map(|n| n.id).collect();
                let objects: Vec<u32> = g.edges().iter().map(|e| e.object).collect();
                let roots: Vec<u32> = ids.iter().copied().filter(|i| !objects.contains(i)).collect();
                prop_assert_eq!(roots, vec![g.referent()]);
                for n in g.nodes() {
                    prop_assert!(!n.words.is_empty());
                    for w in &n.words {
                        prop_assert!(!w.is_empty() && w.chars().all(|c| !c.is_whitespace() && !c.is_uppercase()));
                    }
                }
                for e in g.edges() {
                    prop_assert!(e.subject != e.object);
                    prop_assert!(ids.contains(&e.subject) && ids.contains(&e.object));
                }
                // acyclic: repeated leaf stripping empties the graph
                let mut alive = ids.clone();
                loop {
                    let before = alive.len();
                    let leaves: Vec<u32> = alive.iter().copied().filter(|&n| !g.edges().iter().any(|e| e.subject == n && alive.contains(&e.object))).collect();
                    alive.retain(|n| !leaves.contains(n));
                    if alive.len() == before { break; }
                }
                prop_assert!(alive.is_empty());
            }
        }
    }
}
