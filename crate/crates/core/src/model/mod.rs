//! Scene-graph guided modular network.
//!
//! Nodes of the language graph are processed in dependency order. A leaf
//! grounds its own phrase; an intermediate node grounds each incident edge's
//! sentence and, through the relation path, pulls attention across image
//! edges from the already-grounded object of that edge.
//!
//! Parameter names: `embed`, `lstm.{fwd,bwd}.*`, `w_look`, `w_loc`, `w_rel`,
//! `beta_{look,loc,rel}.{w,b}`, `w_o`, and MLPs `mlp_visual` (object features),
//! `mlp_look` (appearance query), `mlp_spatial` (box features), `mlp_loc`
//! (location query), `mlp_edge` (edge features) and `mlp_rel` (relation query).

mod modules;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use modules::{merge, norm, transfer, MergeMode, SparseGamma};
pub use trace::{EdgeState, NodeState, ReasoningTrace};

use crate::error::{Error, Result};
use crate::langgraph::{LanguageSceneGraph, RelationEdge};
use crate::numkernel::{
    attention_pool, softmax_slice, BiLstm, Mlp, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::semgraph::ImageSemanticGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub feature_dim: usize,
    /// Width of `W_o^T l_ij` inside edge features.
    pub spatial_embed_dim: usize,
    /// Affine layers per MLP.
    pub mlp_layers: usize,
    pub merge: MergeMode,
    pub enable_transfer: bool,
    pub enable_norm: bool,
    pub logit_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 64,
            lstm_hidden: 64,
            mlp_hidden: 64,
            feature_dim: 32,
            spatial_embed_dim: 16,
            mlp_layers: 2,
            merge: MergeMode::Sum,
            enable_transfer: true,
            enable_norm: true,
            logit_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("feature_dim", self.feature_dim),
            ("spatial_embed_dim", self.spatial_embed_dim),
            ("mlp_layers", self.mlp_layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Validation(format!(
                "logit_scale {} must be positive",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

pub const UNK: &str = "<unk>";

/// Word list with the unknown-word token at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Sorted, deduplicated vocabulary over `tokens`.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| t != UNK)
            .collect();
        let words: Vec<String> = std::iter::once(UNK.to_string()).chain(set).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Vocabulary(format!(
                "vocabulary must start with {UNK}"
            )));
        }
        let mut index = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocab { words, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

/// Topological order of the language graph with every modifier before the
/// node it modifies. Ready nodes are taken smallest id first, so the
/// referent, which every node reaches, comes last.
pub fn inference_order(g: &LanguageSceneGraph) -> Result<Vec<u32>> {
    let mut pending: BTreeMap<u32, usize> = g
        .nodes()
        .iter()
        .map(|n| (n.id, g.in_degree(n.id)))
        .collect();
    let mut ready: BTreeSet<u32> = pending
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut order = Vec::with_capacity(pending.len());
    while let Some(n) = ready.pop_first() {
        order.push(n);
        for e in g.edges().iter().filter(|e| e.object == n) {
            let d = pending.get_mut(&e.subject).expect("edge endpoints exist");
            *d -= 1;
            if *d == 0 {
                ready.insert(e.subject);
            }
        }
    }
    if order.len() != g.nodes().len() {
        return Err(Error::Structure("language graph contains a cycle".into()));
    }
    Ok(order)
}

/// Cross-entropy of the referent distribution against `gt`.
pub fn loss(trace: &ReasoningTrace, gt: usize) -> Result<f64> {
    let n = trace.p.len();
    if gt >= n {
        return Err(Error::Usage(format!(
            "ground-truth index {gt} outside {n} objects"
        )));
    }
    Ok(-trace.p[gt].max(f64::MIN_POSITIVE).ln())
}

/// Index of the most probable object; ties go to the smallest index.
pub fn predict(trace: &ReasoningTrace) -> usize {
    argmax(&trace.p)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
struct Params {
    embed: ParamId,
    lstm: BiLstm,
    w_look: ParamId,
    w_loc: ParamId,
    w_rel: ParamId,
    beta_look: (ParamId, ParamId),
    beta_loc: (ParamId, ParamId),
    beta_rel: (ParamId, ParamId),
    w_o: ParamId,
    mlp_visual: Mlp,
    mlp_look: Mlp,
    mlp_spatial: Mlp,
    mlp_loc: Mlp,
    mlp_edge: Mlp,
    mlp_rel: Mlp,
}

/// Image-side keys shared by every node of one expression.
#[derive(Clone, Debug)]
pub struct ImageKeys {
    /// `[N, M]` unit rows from object features.
    pub look: Var,
    /// `[N, M]` unit rows from box features.
    pub loc: Var,
    /// `[E, M]` unit rows from edge features; absent without image edges or
    /// when the relation path is disabled.
    pub edge: Option<Var>,
    pub edges: Rc<[(usize, usize)]>,
    pub num_nodes: usize,
}

/// Result of recording one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `logit_scale · lambda_ref`.
    pub logits: Var,
    pub referent_map: Var,
    pub trace: ReasoningTrace,
}

/// Per-edge quantities recorded during intermediate processing.
struct EdgeOut {
    map: Var,
    state: EdgeState,
}

#[derive(Clone, Debug)]
pub struct Sgmn {
    config: ModelConfig,
    vocab: Vocab,
    store: ParamStore,
    p: Params,
}

fn mlp_dims(input: usize, cfg: &ModelConfig) -> Vec<usize> {
    std::iter::once(input)
        .chain(std::iter::repeat_n(cfg.mlp_hidden, cfg.mlp_layers))
        .collect()
}

impl Sgmn {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (e, h2) = (config.embedding_dim, 2 * config.lstm_hidden);
        let att = 1.0 / (h2 as f64).sqrt();
        let embed = s.insert_uniform("embed", &[vocab.len(), e], 1.0, &mut rng)?;
        let lstm = BiLstm::new(&mut s, "lstm", e, config.lstm_hidden, &mut rng)?;
        let w_look = s.insert_uniform("w_look", &[h2], att, &mut rng)?;
        let w_loc = s.insert_uniform("w_loc", &[h2], att, &mut rng)?;
        let w_rel = s.insert_uniform("w_rel", &[h2], att, &mut rng)?;
        let mut head = |name: &str, s: &mut ParamStore| -> Result<(ParamId, ParamId)> {
            Ok((
                s.insert_uniform(&format!("{name}.w"), &[1, h2], att, &mut rng)?,
                s.insert_uniform(&format!("{name}.b"), &[1], att, &mut rng)?,
            ))
        };
        let beta_look = head("beta_look", &mut s)?;
        let beta_loc = head("beta_loc", &mut s)?;
        let beta_rel = head("beta_rel", &mut s)?;
        let w_o = s.insert_uniform(
            "w_o",
            &[5, config.spatial_embed_dim],
            1.0 / 5f64.sqrt(),
            &mut rng,
        )?;
        let mlp_visual = Mlp::new(
            &mut s,
            "mlp_visual",
            &mlp_dims(config.feature_dim, &config),
            &mut rng,
        )?;
        let mlp_look = Mlp::new(&mut s, "mlp_look", &mlp_dims(e, &config), &mut rng)?;
        let mlp_spatial = Mlp::new(&mut s, "mlp_spatial", &mlp_dims(5, &config), &mut rng)?;
        let mlp_loc = Mlp::new(&mut s, "mlp_loc", &mlp_dims(e, &config), &mut rng)?;
        let edge_in = config.spatial_embed_dim + config.feature_dim;
        let mlp_edge = Mlp::new(&mut s, "mlp_edge", &mlp_dims(edge_in, &config), &mut rng)?;
        let mlp_rel = Mlp::new(&mut s, "mlp_rel", &mlp_dims(e, &config), &mut rng)?;
        Ok(Sgmn {
            config,
            vocab,
            store: s,
            p: Params {
                embed,
                lstm,
                w_look,
                w_loc,
                w_rel,
                beta_look,
                beta_loc,
                beta_rel,
                w_o,
                mlp_visual,
                mlp_look,
                mlp_spatial,
                mlp_loc,
                mlp_edge,
                mlp_rel,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn norm(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.config.enable_norm {
            tape.norm(x)
        } else {
            Ok(x)
        }
    }

    /// Records the image-side keys for `go`.
    pub fn image_keys(&self, tape: &mut Tape, go: &ImageSemanticGraph) -> Result<ImageKeys> {
        let st = &self.store;
        let d = self.config.feature_dim;
        let n = go.num_nodes();
        let mut feats = Vec::with_capacity(n);
        let mut look = Vec::with_capacity(n);
        let mut loc = Vec::with_capacity(n);
        for i in 0..n {
            let f = go.feature(i)?;
            if f.len() != d {
                return Err(Error::dim(
                    "attend_node",
                    format!("object feature width {} but the model expects {d}", f.len()),
                ));
            }
            let v = tape.constant(Tensor::vector(f.to_vec()));
            feats.push(v);
            let k = self.p.mlp_visual.apply(tape, st, v)?;
            look.push(tape.l2_normalize(k)?);
            let sp = tape.constant(Tensor::vector(go.spatial()[i].to_vec()));
            let k = self.p.mlp_spatial.apply(tape, st, sp)?;
            loc.push(tape.l2_normalize(k)?);
        }
        let edges: Rc<[(usize, usize)]> = go.edges().iter().map(|e| (e.target, e.source)).collect();
        let edge = if self.config.enable_transfer && !edges.is_empty() {
            let w_o = tape.param(st, self.p.w_o);
            let mut rows = Vec::with_capacity(edges.len());
            for e in go.edges() {
                let l = tape.constant(Tensor::vector(e.rel.to_vec()));
                let s = tape.mat_t_vec(w_o, l)?;
                let x = tape.concat(&[s, feats[e.source]])?;
                let k = self.p.mlp_edge.apply(tape, st, x)?;
                rows.push(tape.l2_normalize(k)?);
            }
            Some(tape.stack_rows(&rows)?)
        } else {
            None
        };
        Ok(ImageKeys {
            look: tape.stack_rows(&look)?,
            loc: tape.stack_rows(&loc)?,
            edge,
            edges,
            num_nodes: n,
        })
    }

    /// Word embeddings of `words` (unknown words map to the UNK row) and their
    /// bi-LSTM encoding.
    pub fn encode_phrase(
        &self,
        tape: &mut Tape,
        words: &[String],
    ) -> Result<(Vec<Var>, Vec<Var>, Var)> {
        let table = tape.param(&self.store, self.p.embed);
        let embeds = words
            .iter()
            .map(|w| tape.row(table, self.vocab.id(w)))
            .collect::<Result<Vec<_>>>()?;
        let enc = self.p.lstm.encode(tape, &self.store, &embeds)?;
        Ok((embeds, enc.contexts, enc.summary))
    }

    /// Cosine between each key row and the projected, normalized query.
    fn attend(&self, tape: &mut Tape, keys: Var, mlp: &Mlp, query: Var) -> Result<Var> {
        let q = mlp.apply(tape, &self.store, query)?;
        let q = tape.l2_normalize(q)?;
        tape.matvec(keys, q)
    }

    /// Appearance and location maps for phrase queries `v_look`, `v_loc`.
    pub fn attend_node(
        &self,
        tape: &mut Tape,
        keys: &ImageKeys,
        v_look: Var,
        v_loc: Var,
    ) -> Result<(Var, Var)> {
        let look = self.attend(tape, keys.look, &self.p.mlp_look, v_look)?;
        let loc = self.attend(tape, keys.loc, &self.p.mlp_loc, v_loc)?;
        Ok((look, loc))
    }

    /// Non-negative relation weights over the image edges.
    pub fn attend_relation(
        &self,
        tape: &mut Tape,
        keys: &ImageKeys,
        r: Var,
    ) -> Result<Option<Var>> {
        match keys.edge {
            Some(edge) => {
                let c = self.attend(tape, edge, &self.p.mlp_rel, r)?;
                Ok(Some(tape.relu(c)))
            }
            None => Ok(None),
        }
    }

    fn head(&self, tape: &mut Tape, (w, b): (ParamId, ParamId), h: Var) -> Result<Var> {
        let w = tape.param(&self.store, w);
        let b = tape.param(&self.store, b);
        let z = tape.matvec(w, h)?;
        let z = tape.add(z, b)?;
        Ok(tape.sigmoid(z))
    }

    /// Leaf node: ground the phrase by appearance and location.
    pub fn process_leaf(
        &self,
        tape: &mut Tape,
        keys: &ImageKeys,
        words: &[String],
    ) -> Result<(Var, f64, f64)> {
        let (embeds, ctx, h) = self.encode_phrase(tape, words)?;
        let w_look = tape.param(&self.store, self.p.w_look);
        let w_loc = tape.param(&self.store, self.p.w_loc);
        let v_look = attention_pool(tape, &ctx, &embeds, w_look)?;
        let v_loc = attention_pool(tape, &ctx, &embeds, w_loc)?;
        let (l_look, l_loc) = self.attend_node(tape, keys, v_look, v_loc)?;
        let b_look = self.head(tape, self.p.beta_look, h)?;
        let b_loc = self.head(tape, self.p.beta_loc, h)?;
        let a = tape.scale_by(b_look, l_look)?;
        let b = tape.scale_by(b_loc, l_loc)?;
        let sum = tape.add(a, b)?;
        let map = self.norm(tape, sum)?;
        Ok((map, tape.value(b_look).item(), tape.value(b_loc).item()))
    }

    fn process_edge(
        &self,
        tape: &mut Tape,
        keys: &ImageKeys,
        gl: &LanguageSceneGraph,
        e: &RelationEdge,
        object_map: Var,
    ) -> Result<EdgeOut> {
        let words = gl.edge_sentence(e);
        let (embeds, ctx, h) = self.encode_phrase(tape, &words)?;
        let w_look = tape.param(&self.store, self.p.w_look);
        let w_loc = tape.param(&self.store, self.p.w_loc);
        let v_look = attention_pool(tape, &ctx, &embeds, w_look)?;
        let v_loc = attention_pool(tape, &ctx, &embeds, w_loc)?;
        let (l_look, l_loc) = self.attend_node(tape, keys, v_look, v_loc)?;
        let b_look = self.head(tape, self.p.beta_look, h)?;
        let b_loc = self.head(tape, self.p.beta_loc, h)?;
        let a = tape.scale_by(b_look, l_look)?;
        let b = tape.scale_by(b_loc, l_loc)?;
        let mut sum = tape.add(a, b)?;
        let mut beta_rel = None;
        let mut gamma_vals = Vec::new();
        if self.config.enable_transfer {
            let w_rel = tape.param(&self.store, self.p.w_rel);
            let r = attention_pool(tape, &ctx, &embeds, w_rel)?;
            let b_rel = self.head(tape, self.p.beta_rel, h)?;
            beta_rel = Some(tape.value(b_rel).item());
            if let Some(gamma) = self.attend_relation(tape, keys, r)? {
                gamma_vals = tape.value(gamma).data().to_vec();
                let moved = tape.transfer(gamma, object_map, keys.edges.clone())?;
                let rel = self.norm(tape, moved)?;
                let c = tape.scale_by(b_rel, rel)?;
                sum = tape.add(sum, c)?;
            }
        }
        let map = self.norm(tape, sum)?;
        Ok(EdgeOut {
            map,
            state: EdgeState {
                subject: e.subject,
                object: e.object,
                relation: e.relation.join(" "),
                beta_look: tape.value(b_look).item(),
                beta_loc: tape.value(b_loc).item(),
                beta_rel,
                gamma: gamma_vals,
                attention: tape.value(map).data().to_vec(),
            },
        })
    }

    /// Intermediate node: one map per incident edge, merged and normalized.
    fn process_intermediate(
        &self,
        tape: &mut Tape,
        keys: &ImageKeys,
        gl: &LanguageSceneGraph,
        node: u32,
        states: &BTreeMap<u32, Var>,
    ) -> Result<(Var, Vec<EdgeState>)> {
        let mut maps = Vec::new();
        let mut edge_states = Vec::new();
        for e in gl.incoming(node) {
            let obj = *states.get(&e.object).unwrap_or_else(|| {
                panic!("node {node} processed before its modifier {}", e.object)
            });
            let out = self.process_edge(tape, keys, gl, e, obj)?;
            maps.push(out.map);
            edge_states.push(out.state);
        }
        let merged = match self.config.merge {
            MergeMode::Sum => tape.add_all(&maps)?,
            MergeMode::Max => tape.elem_max(&maps)?,
            MergeMode::Min => tape.elem_min(&maps)?,
        };
        Ok((self.norm(tape, merged)?, edge_states))
    }

    /// Records the full reasoning pass for `gl` over `go`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        gl: &LanguageSceneGraph,
        go: &ImageSemanticGraph,
    ) -> Result<ForwardPass> {
        let keys = self.image_keys(tape, go)?;
        let order = inference_order(gl)?;
        let mut states: BTreeMap<u32, Var> = BTreeMap::new();
        let mut node_states = Vec::with_capacity(order.len());
        for &id in &order {
            let node = gl.node(id).expect("ordered ids exist");
            let (map, st) = if gl.in_degree(id) == 0 {
                let (map, bl, bc) = self.process_leaf(tape, &keys, &node.words)?;
                (
                    map,
                    NodeState {
                        node: id,
                        attention: vec![],
                        beta_look: Some(bl),
                        beta_loc: Some(bc),
                        edges: vec![],
                    },
                )
            } else {
                let (map, edges) = self.process_intermediate(tape, &keys, gl, id, &states)?;
                (
                    map,
                    NodeState {
                        node: id,
                        attention: vec![],
                        beta_look: None,
                        beta_loc: None,
                        edges,
                    },
                )
            };
            let mut st = st;
            st.attention = tape.value(map).data().to_vec();
            node_states.push(st);
            states.insert(id, map);
        }
        let referent = gl.referent();
        let referent_map = states[&referent];
        let logits = tape.scale(referent_map, self.config.logit_scale);
        let p = softmax_slice(tape.value(logits).data());
        Ok(ForwardPass {
            logits,
            referent_map,
            trace: ReasoningTrace {
                order,
                nodes: node_states,
                image_edges: keys.edges.to_vec(),
                referent,
                p,
            },
        })
    }

    pub fn forward(
        &self,
        gl: &LanguageSceneGraph,
        go: &ImageSemanticGraph,
    ) -> Result<ReasoningTrace> {
        let mut tape = Tape::new();
        Ok(self.forward_on_tape(&mut tape, gl, go)?.trace)
    }

    /// Records the forward pass and the loss against object index `gt`.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        gl: &LanguageSceneGraph,
        go: &ImageSemanticGraph,
        gt: usize,
    ) -> Result<(Var, ForwardPass)> {
        let fp = self.forward_on_tape(tape, gl, go)?;
        let l = tape.cross_entropy(fp.logits, gt)?;
        Ok((l, fp))
    }

    /// Loss value and its gradient accumulated into the parameter store.
    pub fn accumulate_gradient(
        &mut self,
        gl: &LanguageSceneGraph,
        go: &ImageSemanticGraph,
        gt: usize,
    ) -> Result<(f64, ReasoningTrace)> {
        let mut tape = Tape::new();
        let (l, fp) = self.loss_on_tape(&mut tape, gl, go, gt)?;
        tape.backward(l, &mut self.store)?;
        Ok((tape.value(l).item(), fp.trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langgraph::{PhraseNode, RelationEdge};

    fn graph(n: u32, edges: &[(u32, u32)]) -> LanguageSceneGraph {
        LanguageSceneGraph::new(
            "",
            (0..n)
                .map(|id| PhraseNode {
                    id,
                    words: vec!["cup".into()],
                })
                .collect(),
            edges
                .iter()
                .map(|&(s, o)| RelationEdge {
                    subject: s,
                    object: o,
                    relation: vec!["near".into()],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn order_examples() {
        assert_eq!(inference_order(&graph(1, &[])).unwrap(), vec![0]);
        // A=0, B=1, C=2: C modifies B modifies A
        assert_eq!(
            inference_order(&graph(3, &[(0, 1), (1, 2)])).unwrap(),
            vec![2, 1, 0]
        );
        // B and C modify A, B modifies C
        assert_eq!(
            inference_order(&graph(3, &[(0, 1), (0, 2), (2, 1)])).unwrap(),
            vec![1, 2, 0]
        );
    }

    fn trace_with(logits: &[f64]) -> ReasoningTrace {
        ReasoningTrace {
            order: vec![0],
            nodes: vec![],
            image_edges: vec![],
            referent: 0,
            p: softmax_slice(logits),
        }
    }

    #[test]
    fn loss_examples() {
        let t = trace_with(&[0.3; 4]);
        assert!((loss(&t, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        // -ln(e / (e + e^-1)) = ln(1 + e^-2)
        let t = trace_with(&[1.0, -1.0]);
        assert!((loss(&t, 0).unwrap() - 0.126_928_011_042_972_6).abs() < 1e-12);
        assert!(matches!(loss(&t, 2), Err(Error::Usage(_))));
        let t = trace_with(&[60.0, -60.0]);
        assert!(loss(&t, 0).unwrap() < 1e-40);
    }

    #[test]
    fn predict_examples() {
        let mut t = trace_with(&[0.0]);
        t.p = vec![0.1, 0.7, 0.2];
        assert_eq!(predict(&t), 1);
        t.p = vec![0.5, 0.5];
        assert_eq!(predict(&t), 0);
    }

    #[test]
    fn vocab_unknown_words_map_to_zero() {
        let v = Vocab::from_tokens(["red", "cup", "red"]);
        assert_eq!(v.words(), &["<unk>", "cup", "red"]);
        assert_eq!(v.id("spaceship"), 0);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>(r#"["cup"]"#).is_err());
    }
}
