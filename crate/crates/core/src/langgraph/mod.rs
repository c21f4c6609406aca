//! Language scene graphs: phrase nodes linked by (subject, relation, object)
//! edges that point from the modifying object to the subject it modifies.

mod grammar;
mod interchange;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub use grammar::{
    parse_expression, tokenize, Grammar, DESK_ATTRIBUTES, DESK_CLASSES, DESK_RELATIONS,
};
pub use interchange::{
    graph_from_json, graph_to_json, load_graph, save_graph, InterchangeEdge, InterchangeGraph,
    InterchangeNode,
};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhraseNode {
    pub id: u32,
    pub words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationEdge {
    pub subject: u32,
    pub object: u32,
    pub relation: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageSceneGraph {
    expression: String,
    nodes: Vec<PhraseNode>,
    edges: Vec<RelationEdge>,
    referent: u32,
}

fn check_tokens(words: &[String], what: &str) -> Result<()> {
    if words.is_empty() {
        return Err(Error::Validation(format!("{what} has no words")));
    }
    for w in words {
        if w.is_empty() || w.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
            return Err(Error::Validation(format!(
                "{what} token {w:?} is not a lowercase word"
            )));
        }
    }
    Ok(())
}

impl LanguageSceneGraph {
    /// Validates the structure and derives the referent.
    pub fn new(
        expression: impl Into<String>,
        nodes: Vec<PhraseNode>,
        edges: Vec<RelationEdge>,
    ) -> Result<Self> {
        let mut g = LanguageSceneGraph {
            expression: expression.into(),
            nodes,
            edges,
            referent: 0,
        };
        g.referent = g.validate()?;
        Ok(g)
    }

    pub fn expression(&self) -> &str {
        &self.expression
    }

    pub fn nodes(&self) -> &[PhraseNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    pub fn referent(&self) -> u32 {
        self.referent
    }

    pub fn node(&self, id: u32) -> Option<&PhraseNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Edges whose subject is `id`, i.e. the modifiers of `id`.
    pub fn incoming(&self, id: u32) -> impl Iterator<Item = &RelationEdge> + '_ {
        self.edges.iter().filter(move |e| e.subject == id)
    }

    pub fn in_degree(&self, id: u32) -> usize {
        self.incoming(id).count()
    }

    /// Checks every invariant and returns the referent.
    fn validate(&self) -> Result<u32> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("language graph has no nodes".into()));
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(Error::Validation(format!("duplicate node id {}", n.id)));
            }
            check_tokens(&n.words, &format!("node {}", n.id))?;
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if !ids.contains(&e.subject) || !ids.contains(&e.object) {
                return Err(Error::Validation(format!(
                    "edge ({} <- {}) references a missing node",
                    e.subject, e.object
                )));
            }
            if e.subject == e.object {
                return Err(Error::Validation(format!(
                    "self-loop on node {}",
                    e.subject
                )));
            }
            check_tokens(
                &e.relation,
                &format!("relation {} <- {}", e.subject, e.object),
            )?;
            if !seen.insert((e.subject, e.object, e.relation.clone())) {
                return Err(Error::Validation(format!(
                    "duplicate edge {} <- {}",
                    e.subject, e.object
                )));
            }
        }
        self.check_acyclic()?;
        let referent = find_referent(self)?;
        // every node must reach the referent along object -> subject edges
        let mut reach = BTreeSet::from([referent]);
        let mut queue = VecDeque::from([referent]);
        while let Some(s) = queue.pop_front() {
            for e in self.incoming(s) {
                if reach.insert(e.object) {
                    queue.push_back(e.object);
                }
            }
        }
        if reach.len() != self.nodes.len() {
            return Err(Error::Structure(format!(
                "{} node(s) cannot reach referent {referent}",
                self.nodes.len() - reach.len()
            )));
        }
        Ok(referent)
    }

    fn check_acyclic(&self) -> Result<()> {
        let mut indeg: BTreeMap<u32, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(&e.subject).expect("validated") += 1;
        }
        let mut ready: VecDeque<u32> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut done = 0;
        while let Some(o) = ready.pop_front() {
            done += 1;
            for e in self.edges.iter().filter(|e| e.object == o) {
                let d = indeg.get_mut(&e.subject).expect("validated");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(e.subject);
                }
            }
        }
        if done != self.nodes.len() {
            return Err(Error::Structure("language graph contains a cycle".into()));
        }
        Ok(())
    }

    /// Words of the sentence formed by an edge: subject, relation, object.
    pub fn edge_sentence(&self, e: &RelationEdge) -> Vec<String> {
        let mut words = self
            .node(e.subject)
            .map(|n| n.words.clone())
            .unwrap_or_default();
        words.extend(e.relation.iter().cloned());
        words.extend(
            self.node(e.object)
                .map(|n| n.words.clone())
                .unwrap_or_default(),
        );
        words
    }
}

/// The unique node that modifies nothing (never the object of an edge).
pub fn find_referent(g: &LanguageSceneGraph) -> Result<u32> {
    let objects: BTreeSet<u32> = g.edges.iter().map(|e| e.object).collect();
    let roots: Vec<u32> = g
        .nodes
        .iter()
        .map(|n| n.id)
        .filter(|id| !objects.contains(id))
        .collect();
    match roots.as_slice() {
        [r] => Ok(*r),
        [] => Err(Error::Structure("no node with zero out-degree".into())),
        many => Err(Error::Structure(format!(
            "multiple zero out-degree nodes {many:?}"
        ))),
    }
}
