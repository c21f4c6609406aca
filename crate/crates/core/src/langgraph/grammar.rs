//! Deterministic grammar for template-generated expressions.
//!
//! ```text
//! expression := np modifier*
//! np         := article? attribute* noun
//! modifier   := relation np
//!             | ("that" "is" | "which" "is") relation np   -- opens a clause on the preceding np
//!             | "and"+ relation np                         -- each "and" closes one open clause
//! ```
//!
//! Bare modifiers attach to the head of the innermost open clause (the first
//! noun phrase at the outset). A relative pronoun opens a clause headed by the
//! noun phrase just read. Each `and` closes one clause. Relations are matched by
//! longest prefix. Articles are dropped from phrase words.

use std::collections::BTreeSet;

use super::{LanguageSceneGraph, PhraseNode, RelationEdge};
use crate::error::{Error, Result};

pub const DESK_CLASSES: &[&str] = &[
    "cup", "plate", "bottle", "table", "chair", "lamp", "girl", "dog", "smock", "book", "box",
    "vase",
];

/// Attribute words grouped by category: color, material, shape.
pub const DESK_ATTRIBUTES: &[(&str, &[&str])] = &[
    (
        "color",
        &["red", "blue", "green", "yellow", "white", "black", "pink"],
    ),
    ("material", &["wooden", "metal", "plastic", "glass"]),
    ("shape", &["round", "square", "tall"]),
];

/// Relation surface phrases understood by the desk grammar.
pub const DESK_RELATIONS: &[&str] = &[
    "left of",
    "right of",
    "above",
    "below",
    "on",
    "in",
    "across",
    "near",
    "beside",
    "behind",
    "in front of",
    "with",
    "with the same color as",
    "with the same material as",
    "with the same shape as",
];

pub(crate) const ARTICLES: &[&str] = &["the", "a", "an", "this"];
pub(crate) const REL_PRONOUNS: &[[&str; 2]] = &[["that", "is"], ["which", "is"]];
pub(crate) const CONJUNCTION: &str = "and";

/// Lexicon backing the expression grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    nouns: BTreeSet<String>,
    attributes: BTreeSet<String>,
    /// Longest phrases first.
    relations: Vec<Vec<String>>,
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl Grammar {
    pub fn new<S: AsRef<str>>(nouns: &[S], attributes: &[S], relations: &[S]) -> Result<Self> {
        let nouns: BTreeSet<String> = nouns.iter().map(|s| s.as_ref().to_lowercase()).collect();
        let attributes: BTreeSet<String> = attributes
            .iter()
            .map(|s| s.as_ref().to_lowercase())
            .collect();
        let mut rels: Vec<Vec<String>> = relations
            .iter()
            .map(|r| split(&r.as_ref().to_lowercase()))
            .collect();
        rels.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        rels.dedup();

        let reserved: BTreeSet<&str> = ARTICLES
            .iter()
            .copied()
            .chain(REL_PRONOUNS.iter().flat_map(|p| p.iter().copied()))
            .chain([CONJUNCTION])
            .collect();
        for w in nouns.iter().chain(&attributes) {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "lexicon entry {w:?} must be one word"
                )));
            }
            if reserved.contains(w.as_str()) {
                return Err(Error::Validation(format!(
                    "lexicon entry {w:?} is a reserved grammar word"
                )));
            }
        }
        if let Some(w) = nouns.intersection(&attributes).next() {
            return Err(Error::Validation(format!(
                "{w:?} is both a noun and an attribute"
            )));
        }
        for r in &rels {
            if r.is_empty() {
                return Err(Error::Validation("empty relation phrase".into()));
            }
            // a relation may not begin where a noun phrase could, or parsing would be ambiguous
            let head = r[0].as_str();
            if nouns.contains(head) || attributes.contains(head) || reserved.contains(head) {
                return Err(Error::Validation(format!(
                    "relation {:?} starts with a reserved or lexical word",
                    r.join(" ")
                )));
            }
        }
        Ok(Grammar {
            nouns,
            attributes,
            relations: rels,
        })
    }

    /// The shipped desk-scale lexicon.
    pub fn desk() -> Self {
        let attrs: Vec<&str> = DESK_ATTRIBUTES
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        Grammar::new(DESK_CLASSES, &attrs, DESK_RELATIONS).expect("desk lexicon is consistent")
    }

    pub fn is_noun(&self, w: &str) -> bool {
        self.nouns.contains(w)
    }

    pub fn is_attribute(&self, w: &str) -> bool {
        self.attributes.contains(w)
    }

    pub fn has_relation(&self, phrase: &[String]) -> bool {
        self.relations.iter().any(|r| r == phrase)
    }

    fn match_relation(&self, toks: &[String]) -> Option<&[String]> {
        self.relations
            .iter()
            .find(|r| toks.len() >= r.len() && toks[..r.len()] == r[..])
            .map(|r| r.as_slice())
    }
}

/// Lowercases, strips punctuation, and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

struct Parser<'a> {
    toks: Vec<String>,
    pos: usize,
    grammar: &'a Grammar,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: self.pos,
            message: msg.into(),
        })
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn noun_phrase(&mut self) -> Result<Vec<String>> {
        if self.peek().is_some_and(|t| ARTICLES.contains(&t)) {
            self.pos += 1;
        }
        let mut words = Vec::new();
        while let Some(t) = self.peek() {
            if self.grammar.is_attribute(t) {
                words.push(t.to_string());
                self.pos += 1;
            } else {
                break;
            }
        }
        match self.peek() {
            Some(t) if self.grammar.is_noun(t) => {
                words.push(t.to_string());
                self.pos += 1;
                Ok(words)
            }
            Some(t) => self.err(format!("expected a noun, found {t:?}")),
            None => self.err("expected a noun, found end of expression"),
        }
    }

    fn rel_pronoun(&self) -> bool {
        REL_PRONOUNS.iter().any(|p| {
            self.toks.len() >= self.pos + 2
                && self.toks[self.pos] == p[0]
                && self.toks[self.pos + 1] == p[1]
        })
    }

    fn relation(&mut self) -> Result<Vec<String>> {
        match self.grammar.match_relation(&self.toks[self.pos..]) {
            Some(r) => {
                let r = r.to_vec();
                self.pos += r.len();
                Ok(r)
            }
            None => match self.peek() {
                Some(t) => self.err(format!("expected a relation, found {t:?}")),
                None => self.err("expected a relation, found end of expression"),
            },
        }
    }
}

/// Parses a template-grammar expression into its language scene graph.
/// Node ids follow order of appearance, so the referent is node 0.
pub fn parse_expression(text: &str, grammar: &Grammar) -> Result<LanguageSceneGraph> {
    let mut p = Parser {
        toks: tokenize(text),
        pos: 0,
        grammar,
    };
    if p.toks.is_empty() {
        return p.err("empty expression");
    }
    let mut nodes = vec![PhraseNode {
        id: 0,
        words: p.noun_phrase()?,
    }];
    let mut edges = Vec::new();
    let mut heads: Vec<u32> = vec![0];
    let mut last = 0u32;
    while p.peek().is_some() {
        if p.rel_pronoun() {
            p.pos += 2;
            heads.push(last);
        } else {
            while p.peek() == Some(CONJUNCTION) {
                if heads.len() == 1 {
                    return p.err("'and' with no open clause to close");
                }
                p.pos += 1;
                heads.pop();
            }
        }
        let relation = p.relation()?;
        let words = p.noun_phrase()?;
        let id = nodes.len() as u32;
        nodes.push(PhraseNode { id, words });
        edges.push(RelationEdge {
            subject: *heads.last().expect("root clause never closes"),
            object: id,
            relation,
        });
        last = id;
    }
    LanguageSceneGraph::new(text, nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        split(s)
    }

    #[test]
    fn single_entity() {
        let g = parse_expression("the red cup", &Grammar::desk()).unwrap();
        assert_eq!(g.nodes().len(), 1);
        assert_eq!(g.nodes()[0].words, words("red cup"));
        assert!(g.edges().is_empty());
        assert_eq!(g.referent(), 0);
    }

    #[test]
    fn girl_in_blue_smock_across_the_table() {
        let g =
            parse_expression("the girl in blue smock across the table", &Grammar::desk()).unwrap();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(g.node(0).unwrap().words, words("girl"));
        let e: Vec<_> = g
            .edges()
            .iter()
            .map(|e| {
                (
                    g.node(e.subject).unwrap().words.join(" "),
                    e.relation.join(" "),
                    g.node(e.object).unwrap().words.join(" "),
                )
            })
            .collect();
        assert_eq!(
            e,
            vec![
                (
                    "girl".to_string(),
                    "in".to_string(),
                    "blue smock".to_string()
                ),
                (
                    "girl".to_string(),
                    "across".to_string(),
                    "table".to_string()
                ),
            ]
        );
        assert_eq!(g.node(g.referent()).unwrap().words, words("girl"));
    }

    #[test]
    fn relative_clause_and_close() {
        let g = parse_expression(
            "the cup near the plate that is left of a lamp and on the wooden table",
            &Grammar::desk(),
        )
        .unwrap();
        let pairs: Vec<(u32, u32)> = g.edges().iter().map(|e| (e.subject, e.object)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (0, 3)]);
        assert_eq!(g.edges()[2].relation, words("on"));

        let g = parse_expression(
            "the cup near the plate that is left of a lamp that is on a table and and above the box",
            &Grammar::desk(),
        )
        .unwrap();
        let pairs: Vec<(u32, u32)> = g.edges().iter().map(|e| (e.subject, e.object)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3), (0, 4)]);
    }

    #[test]
    fn longest_relation_wins() {
        let g =
            parse_expression("the cup with the same color as the plate", &Grammar::desk()).unwrap();
        assert_eq!(g.edges()[0].relation, words("with the same color as"));
        let g = parse_expression("the cup in front of the lamp", &Grammar::desk()).unwrap();
        assert_eq!(g.edges()[0].relation, words("in front of"));
    }

    #[test]
    fn errors_carry_positions() {
        let g = Grammar::desk();
        match parse_expression("the red spaceship", &g) {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_expression("the cup and on the table", &g),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_expression("the cup near", &g),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_expression("", &g), Err(Error::Parse { .. })));
    }

    #[test]
    fn punctuation_and_case_ignored() {
        assert_eq!(tokenize("The Red, cup."), words("the red cup"));
    }

    #[test]
    fn inconsistent_lexicon_rejected() {
        assert!(Grammar::new(&["cup"], &["cup"], &["on"]).is_err());
        assert!(Grammar::new(&["the"], &["red"], &["on"]).is_err());
        assert!(Grammar::new(&["cup"], &["red"], &["cup on"]).is_err());
    }
}
