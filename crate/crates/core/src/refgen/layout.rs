use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest layout the generator emits.
pub const MAX_SLOTS: usize = 5;

/// Abstract expression structure over slots `0..n`. Edges are
/// `(subject, object)`: the object slot modifies the subject slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Layout {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let l = Layout { n, edges };
        l.root()?;
        Ok(l)
    }

    /// The unique slot that modifies nothing; checks acyclicity and reachability.
    pub fn root(&self) -> Result<usize> {
        if self.n == 0 || self.n > MAX_SLOTS {
            return Err(Error::Structure(format!(
                "layout has {} slots (1 to {MAX_SLOTS} allowed)",
                self.n
            )));
        }
        let mut seen = BTreeSet::new();
        for &(s, o) in &self.edges {
            if s >= self.n || o >= self.n || s == o || !seen.insert((s, o)) {
                return Err(Error::Structure(format!("bad layout edge ({s}, {o})")));
            }
        }
        let objects: BTreeSet<usize> = self.edges.iter().map(|e| e.1).collect();
        let roots: Vec<usize> = (0..self.n).filter(|s| !objects.contains(s)).collect();
        let [root] = roots[..] else {
            return Err(Error::Structure(format!(
                "layout has roots {roots:?}, need exactly one"
            )));
        };
        if self.topological_order().len() != self.n {
            return Err(Error::Structure("layout contains a cycle".into()));
        }
        let mut reach = BTreeSet::from([root]);
        let mut frontier = vec![root];
        while let Some(s) = frontier.pop() {
            for &(_, o) in self.edges.iter().filter(|e| e.0 == s) {
                if reach.insert(o) {
                    frontier.push(o);
                }
            }
        }
        if reach.len() != self.n {
            return Err(Error::Structure("some slot cannot reach the root".into()));
        }
        Ok(root)
    }

    /// Modifiers of `slot`, in edge order.
    pub fn modifiers(&self, slot: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.0 == slot)
            .map(|e| e.1)
            .collect()
    }

    pub fn in_degree(&self, slot: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == slot).count()
    }

    /// Modifiers before the slots they modify, smallest ready slot first.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut pending: Vec<usize> = (0..self.n).map(|s| self.in_degree(s)).collect();
        let mut ready: BTreeSet<usize> = (0..self.n).filter(|&s| pending[s] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(s) = ready.pop_first() {
            order.push(s);
            for &(subj, _) in self.edges.iter().filter(|e| e.1 == s) {
                pending[subj] -= 1;
                if pending[subj] == 0 {
                    ready.insert(subj);
                }
            }
        }
        order
    }

    fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.n
    }

    /// Longest modifier chain below `slot`, counted in slots.
    fn height(&self, slot: usize) -> usize {
        1 + self
            .modifiers(slot)
            .into_iter()
            .map(|c| self.height(c))
            .max()
            .unwrap_or(0)
    }

    fn size(&self, slot: usize) -> usize {
        1 + self
            .modifiers(slot)
            .into_iter()
            .map(|c| self.size(c))
            .sum::<usize>()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Relabelings `perm` (old slot -> new slot) that send the root to slot 0.
fn rooted_permutations(n: usize, root: usize) -> impl Iterator<Item = Vec<usize>> {
    permutations(n).into_iter().filter(move |p| p[root] == 0)
}

fn adjacency_bits(layout: &Layout, perm: &[usize]) -> String {
    let n = layout.n;
    let mut bits = vec![b'0'; n * n];
    for &(s, o) in &layout.edges {
        bits[perm[s] * n + perm[o]] = b'1';
    }
    String::from_utf8(bits).expect("ascii")
}

/// Canonical key for a layout: slot count, sorted modifier counts, and the
/// smallest adjacency string over relabelings that put the root first.
/// Isomorphic layouts share a key.
pub fn classify_layout(layout: &Layout) -> Result<String> {
    let root = layout.root()?;
    if layout.n == 1 {
        return Ok("1:single".into());
    }
    let mut indeg: Vec<usize> = (0..layout.n).map(|s| layout.in_degree(s)).collect();
    indeg.sort_unstable();
    let canon = rooted_permutations(layout.n, root)
        .map(|p| adjacency_bits(layout, &p))
        .min()
        .expect("at least one permutation");
    let degs: String = indeg.iter().map(|d| d.to_string()).collect();
    Ok(format!("{}:{degs}:{canon}", layout.n))
}

/// Slot relabeling `map[a_slot] = b_slot` carrying layout `a` onto `b`.
pub(crate) fn isomorphism(a: &Layout, b: &Layout) -> Option<Vec<usize>> {
    if a.n != b.n || a.edges.len() != b.edges.len() {
        return None;
    }
    let target: BTreeSet<(usize, usize)> = b.edges.iter().copied().collect();
    let (ra, rb) = (a.root().ok()?, b.root().ok()?);
    permutations(a.n)
        .into_iter()
        .find(|p| p[ra] == rb && a.edges.iter().all(|&(s, o)| target.contains(&(p[s], p[o]))))
}

/// One element of a template's surface form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Piece {
    Word(String),
    /// Entity phrase of a slot.
    Entity(usize),
    /// Relation words of a layout edge, by index.
    Relation(usize),
}

/// Parameterized expression for one layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub key: String,
    pub layout: Layout,
    /// Surface variant label, e.g. `"that is/the"`.
    pub production: String,
    pub pieces: Vec<Piece>,
}

impl Template {
    /// Renders `layout` with root article `root_article`, modifier article
    /// `article` and relative pronoun `relpron`. Modifiers of a slot appear
    /// shortest subtree first, so closing clauses never skips a sibling.
    fn render(
        layout: &Layout,
        root_article: &str,
        article: &str,
        relpron: &str,
    ) -> Result<Template> {
        let root = layout.root()?;
        if !layout.is_tree() {
            return Err(Error::Structure(
                "templates exist only for tree layouts".into(),
            ));
        }
        let mut pieces = vec![Piece::Word(root_article.into()), Piece::Entity(root)];
        let mut height = 1;
        Self::emit(layout, root, 1, &mut height, article, relpron, &mut pieces);
        Ok(Template {
            key: classify_layout(layout)?,
            layout: layout.clone(),
            production: format!("{relpron}/{article}"),
            pieces,
        })
    }

    fn emit(
        layout: &Layout,
        slot: usize,
        level: usize,
        height: &mut usize,
        article: &str,
        relpron: &str,
        out: &mut Vec<Piece>,
    ) {
        let mut kids = layout.modifiers(slot);
        kids.sort_by_key(|&c| (layout.height(c), layout.size(c), c));
        for c in kids {
            while *height > level {
                out.push(Piece::Word("and".into()));
                *height -= 1;
            }
            let e = layout
                .edges
                .iter()
                .position(|&x| x == (slot, c))
                .expect("edge exists");
            out.push(Piece::Relation(e));
            out.push(Piece::Word(article.into()));
            out.push(Piece::Entity(c));
            if !layout.modifiers(c).is_empty() {
                out.extend(relpron.split(' ').map(|w| Piece::Word(w.into())));
                *height += 1;
                Self::emit(layout, c, *height, height, article, relpron, out);
            }
        }
    }

    /// Slots in order of first mention.
    pub fn mention_order(&self) -> Vec<usize> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Entity(s) => Some(*s),
                _ => None,
            })
            .collect()
    }

    /// Surface string with `<slot>` and `[edge]` placeholders.
    pub fn surface(&self) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Word(w) => w.clone(),
                Piece::Entity(s) => format!("<{s}>"),
                Piece::Relation(e) => format!("[{e}]"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Templates for every tree layout up to [`MAX_SLOTS`] slots.
#[derive(Clone, Debug)]
pub struct TemplateLibrary {
    by_key: BTreeMap<String, Vec<Template>>,
}

impl TemplateLibrary {
    pub fn new() -> Self {
        let mut by_key: BTreeMap<String, Vec<Template>> = BTreeMap::new();
        by_key.insert(
            "1:single".into(),
            ["the", "this"]
                .iter()
                .map(|a| {
                    Template::render(
                        &Layout {
                            n: 1,
                            edges: vec![],
                        },
                        a,
                        a,
                        "that is",
                    )
                    .expect("single")
                })
                .map(|mut t| {
                    t.production =
                        format!("single/{}", t.production.split('/').nth(1).unwrap_or(""));
                    t
                })
                .collect(),
        );
        for n in 2..=MAX_SLOTS {
            // parent[k] < k enumerates every rooted tree (with repeats)
            let mut parents = vec![0usize; n];
            loop {
                let layout = Layout {
                    n,
                    edges: (1..n).map(|k| (parents[k], k)).collect(),
                };
                let key = classify_layout(&layout).expect("generated trees are valid");
                by_key.entry(key).or_insert_with(|| {
                    let mut v = Vec::new();
                    for relpron in ["that is", "which is"] {
                        for article in ["the", "a"] {
                            v.push(
                                Template::render(&layout, "the", article, relpron)
                                    .expect("tree renders"),
                            );
                        }
                    }
                    v
                });
                // odometer over parent choices
                let mut k = n - 1;
                loop {
                    if k == 0 {
                        break;
                    }
                    if parents[k] + 1 < k {
                        parents[k] += 1;
                        break;
                    }
                    parents[k] = 0;
                    k -= 1;
                }
                if k == 0 {
                    break;
                }
            }
        }
        TemplateLibrary { by_key }
    }

    pub fn get(&self, key: &str) -> Option<&[Template]> {
        self.by_key.get(key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.by_key.keys()
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::new()
    }
}
