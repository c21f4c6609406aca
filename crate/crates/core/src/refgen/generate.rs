use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{
    classify_layout, isomorphism, Layout, Piece, Template, TemplateLibrary, MAX_SLOTS,
};
use super::program::{accept, compile_program, difficulty, FunctionalProgram};
use super::scene::GroundTruthSceneGraph;
use super::world::{relation_surface, World};
use crate::error::{Error, Result};
use crate::numkernel::write_atomic;

/// Edge of a sampled subgraph between slots; `object` modifies `subject`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubEdge {
    pub subject: usize,
    pub object: usize,
    pub relation: String,
}

/// Connected tree of scene objects around a referent; slot 0 is the referent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub objects: Vec<u32>,
    pub edges: Vec<SubEdge>,
}

impl Subgraph {
    pub fn layout(&self) -> Result<Layout> {
        Layout::new(
            self.objects.len(),
            self.edges.iter().map(|e| (e.subject, e.object)).collect(),
        )
    }
}

/// Sampling preferences: rarer classes and relations are favoured with
/// weight `count^-alpha`; extensions away from the referent are multiplied by
/// `chain_boost` when three or four slots are requested.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWeights {
    pub class_count: BTreeMap<String, usize>,
    pub relation_count: BTreeMap<String, usize>,
    pub alpha: f64,
    pub chain_boost: f64,
}

impl SamplingWeights {
    pub fn from_scenes(scenes: &[GroundTruthSceneGraph], alpha: f64, chain_boost: f64) -> Self {
        let mut class_count = BTreeMap::new();
        let mut relation_count = BTreeMap::new();
        for s in scenes {
            for o in &s.objects {
                *class_count.entry(o.class.clone()).or_insert(0) += 1;
            }
            for r in &s.relations {
                *relation_count.entry(r.relation.clone()).or_insert(0) += 1;
            }
        }
        SamplingWeights {
            class_count,
            relation_count,
            alpha,
            chain_boost,
        }
    }

    pub fn uniform() -> Self {
        SamplingWeights {
            class_count: BTreeMap::new(),
            relation_count: BTreeMap::new(),
            alpha: 0.0,
            chain_boost: 1.0,
        }
    }

    pub fn class_weight(&self, class: &str) -> f64 {
        (self.class_count.get(class).copied().unwrap_or(1).max(1) as f64).powf(-self.alpha)
    }

    pub fn relation_weight(&self, relation: &str) -> f64 {
        (self
            .relation_count
            .get(relation)
            .copied()
            .unwrap_or(1)
            .max(1) as f64)
            .powf(-self.alpha)
    }
}

/// Grows a tree of `c` distinct objects from `referent` by repeatedly
/// attaching a related object to one already chosen.
pub fn sample_subgraph(
    scene: &GroundTruthSceneGraph,
    referent: u32,
    c: usize,
    weights: &SamplingWeights,
    rng: &mut impl Rng,
) -> Result<Subgraph> {
    if c == 0 || c > MAX_SLOTS {
        return Err(Error::Usage(format!(
            "node count {c} outside 1..={MAX_SLOTS}"
        )));
    }
    if scene.object(referent).is_none() {
        return Err(Error::Usage(format!(
            "scene {} has no object {referent}",
            scene.image_id
        )));
    }
    let mut sub = Subgraph {
        objects: vec![referent],
        edges: vec![],
    };
    let boost_chains = c == 3 || c == 4;
    while sub.objects.len() < c {
        let mut candidates = Vec::new();
        let mut w = Vec::new();
        for (slot, &obj) in sub.objects.iter().enumerate() {
            for r in scene.relations.iter().filter(|r| r.subject == obj) {
                if sub.objects.contains(&r.object) {
                    continue;
                }
                let class = &scene.object(r.object).expect("validated scene").class;
                let mut weight = weights.class_weight(class) * weights.relation_weight(&r.relation);
                if boost_chains && slot != 0 {
                    weight *= weights.chain_boost;
                }
                candidates.push((slot, r));
                w.push(weight);
            }
        }
        if candidates.is_empty() {
            return Err(Error::Sampling(format!(
                "object {referent} in scene {} has no {c}-object neighbourhood",
                scene.image_id
            )));
        }
        let pick = WeightedIndex::new(&w)
            .map_err(|e| Error::Sampling(format!("sampling weights: {e}")))?
            .sample(rng);
        let (slot, r) = candidates[pick];
        sub.edges.push(SubEdge {
            subject: slot,
            object: sub.objects.len(),
            relation: r.relation.clone(),
        });
        sub.objects.push(r.object);
    }
    Ok(sub)
}

/// Mention filled into one template slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFill {
    pub object: u32,
    pub class: String,
    pub attributes: Vec<String>,
}

/// Template parameters: one fill per slot and one relation class per layout edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledParams {
    pub slots: Vec<SlotFill>,
    pub relations: Vec<String>,
}

/// Fills `template` from `sub`. Each mention keeps a random subset of its
/// object's attributes, never one whose category links it through a
/// same-attribute relation in the subgraph.
pub fn fill_template(
    template: &Template,
    sub: &Subgraph,
    scene: &GroundTruthSceneGraph,
    world: &World,
    rng: &mut impl Rng,
) -> Result<(String, FilledParams)> {
    let map = isomorphism(&sub.layout()?, &template.layout)
        .ok_or_else(|| Error::Usage(format!("subgraph does not match layout {}", template.key)))?;
    let n = sub.objects.len();
    let mut objects = vec![0u32; n];
    for (a, &t) in map.iter().enumerate() {
        objects[t] = sub.objects[a];
    }
    let mut relations = vec![String::new(); template.layout.edges.len()];
    let mut blocked: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    for e in &sub.edges {
        let (s, o) = (map[e.subject], map[e.object]);
        let idx = template
            .layout
            .edges
            .iter()
            .position(|&x| x == (s, o))
            .expect("isomorphism maps edges onto edges");
        relations[idx] = e.relation.clone();
        if let Some(cat) = e.relation.strip_prefix("same ") {
            blocked[s].insert(cat);
            blocked[o].insert(cat);
        }
    }
    let category_rank = |a: &str| {
        world
            .attribute_categories
            .iter()
            .position(|(c, _)| Some(c.as_str()) == world.category_of(a))
            .unwrap_or(usize::MAX)
    };
    let mut slots = Vec::with_capacity(n);
    for (t, &id) in objects.iter().enumerate() {
        let o = scene.object(id).expect("subgraph objects exist");
        let available: Vec<&String> = o
            .attributes
            .iter()
            .filter(|a| {
                world
                    .category_of(a)
                    .is_some_and(|c| !blocked[t].contains(c))
            })
            .collect();
        let k = rng.random_range(0..=available.len());
        let mut chosen: Vec<String> = index::sample(rng, available.len(), k)
            .into_iter()
            .map(|i| available[i].clone())
            .collect();
        chosen.sort_by_key(|a| (category_rank(a), a.clone()));
        slots.push(SlotFill {
            object: id,
            class: o.class.clone(),
            attributes: chosen,
        });
    }
    let mut words: Vec<String> = Vec::new();
    for p in &template.pieces {
        match p {
            Piece::Word(w) => words.push(w.clone()),
            Piece::Entity(s) => {
                words.extend(slots[*s].attributes.iter().cloned());
                words.push(slots[*s].class.clone());
            }
            Piece::Relation(e) => words.push(relation_surface(&relations[*e])),
        }
    }
    Ok((words.join(" "), FilledParams { slots, relations }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One accepted expression with everything needed to re-verify it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSample {
    pub expression: String,
    pub referent: u32,
    pub scene_id: String,
    pub split: Split,
    /// Canonical layout key.
    pub layout: String,
    /// Template layout the slots and relations refer to.
    pub structure: Layout,
    pub node_count: usize,
    pub difficulty: usize,
    pub params: FilledParams,
    pub program: FunctionalProgram,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaCell {
    pub difficulty: usize,
    pub nodes: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub alpha: f64,
    pub chain_boost: f64,
    /// Consecutive failed attempts tolerated per scene and node count.
    pub retry_budget: usize,
    /// Accepted candidates kept per scene and node count before balancing.
    pub per_scene_cap: usize,
    pub quotas: Vec<QuotaCell>,
    /// Fractions of scenes assigned to train and val; the rest go to test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            alpha: 0.5,
            chain_boost: 2.0,
            retry_budget: 50,
            per_scene_cap: 6,
            quotas: DatasetConfig::uniform_quotas(40),
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

impl DatasetConfig {
    /// `count` samples for every cell with `1 <= d <= C <= 5`.
    pub fn uniform_quotas(count: usize) -> Vec<QuotaCell> {
        (1..=MAX_SLOTS)
            .flat_map(|c| {
                (1..=c).map(move |d| QuotaCell {
                    difficulty: d,
                    nodes: c,
                    count,
                })
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        for q in &self.quotas {
            if q.difficulty == 0 || q.difficulty > q.nodes || q.nodes > MAX_SLOTS {
                return Err(Error::Validation(format!(
                    "quota cell (d={}, C={}) violates 1 <= d <= C <= {MAX_SLOTS}",
                    q.difficulty, q.nodes
                )));
            }
        }
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.train_fraction)
            || !ok(self.val_fraction)
            || self.train_fraction + self.val_fraction > 1.0
        {
            return Err(Error::Validation(
                "split fractions must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.chain_boost.is_finite() && self.chain_boost > 0.0) {
            return Err(Error::Validation(
                "alpha and chain_boost must be finite, chain_boost positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub difficulty: usize,
    pub nodes: usize,
    pub requested: usize,
    pub produced: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDataset {
    pub samples: Vec<ExpressionSample>,
    pub shortfall: Vec<Shortfall>,
    /// Accepted candidates before balancing.
    pub pool_size: usize,
}

impl GeneratedDataset {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for x in &self.samples {
            s.push_str(&serde_json::to_string(x).expect("sample serializes"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<ExpressionSample>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Load(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

struct Candidate {
    scene: usize,
    sample: ExpressionSample,
}

fn attempt(
    scene: &GroundTruthSceneGraph,
    c: usize,
    lib: &TemplateLibrary,
    weights: &SamplingWeights,
    world: &World,
    rng: &mut ChaCha8Rng,
) -> Option<(
    String,
    u32,
    Template,
    FilledParams,
    FunctionalProgram,
    usize,
)> {
    let referent = scene.objects.choose(rng)?.id;
    let sub = sample_subgraph(scene, referent, c, weights, rng).ok()?;
    let key = classify_layout(&sub.layout().ok()?).ok()?;
    let template = lib.get(&key)?.choose(rng)?.clone();
    let (text, params) = fill_template(&template, &sub, scene, world, rng).ok()?;
    let program = compile_program(&template.layout, &params).ok()?;
    if !accept(&program, scene, referent, world) {
        return None;
    }
    let d = difficulty(&program, scene, referent, world).ok()?;
    Some((text, referent, template, params, program, d))
}

/// Builds a candidate pool scene by scene, then draws each quota cell from it.
/// Scenes are partitioned between splits, so no scene feeds two splits.
pub fn generate_dataset(
    scenes: &[GroundTruthSceneGraph],
    cfg: &DatasetConfig,
    world: &World,
) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let lib = TemplateLibrary::new();
    let weights = SamplingWeights::from_scenes(scenes, cfg.alpha, cfg.chain_boost);
    let wanted: BTreeSet<usize> = cfg
        .quotas
        .iter()
        .filter(|q| q.count > 0)
        .map(|q| q.nodes)
        .collect();

    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    split_rng.set_stream(u64::MAX);
    order.shuffle(&mut split_rng);
    let n_train = (cfg.train_fraction * scenes.len() as f64).round() as usize;
    let n_val = ((cfg.val_fraction * scenes.len() as f64).round() as usize)
        .min(scenes.len() - n_train.min(scenes.len()));
    let mut split_of = vec![Split::Test; scenes.len()];
    for (rank, &i) in order.iter().enumerate() {
        split_of[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut pool: Vec<Candidate> = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(si as u64);
        let mut seen: BTreeSet<(String, u32)> = BTreeSet::new();
        for &c in &wanted {
            let (mut kept, mut failures) = (0, 0);
            while kept < cfg.per_scene_cap && failures < cfg.retry_budget {
                match attempt(scene, c, &lib, &weights, world, &mut rng) {
                    Some((text, referent, template, params, program, d))
                        if seen.insert((text.clone(), referent)) =>
                    {
                        failures = 0;
                        kept += 1;
                        pool.push(Candidate {
                            scene: si,
                            sample: ExpressionSample {
                                expression: text,
                                referent,
                                scene_id: scene.image_id.clone(),
                                split: split_of[si],
                                layout: template.key.clone(),
                                structure: template.layout.clone(),
                                node_count: c,
                                difficulty: d,
                                params,
                                program,
                            },
                        });
                    }
                    _ => failures += 1,
                }
            }
        }
    }
    let pool_size = pool.len();

    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, c) in pool.iter().enumerate() {
        cells
            .entry((c.sample.difficulty, c.sample.node_count))
            .or_default()
            .push(i);
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut shortfall = Vec::new();
    for (qi, q) in cfg.quotas.iter().enumerate() {
        let mut members = cells
            .get(&(q.difficulty, q.nodes))
            .cloned()
            .unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX - 1 - qi as u64);
        members.shuffle(&mut rng);
        members.truncate(q.count);
        if members.len() < q.count {
            shortfall.push(Shortfall {
                difficulty: q.difficulty,
                nodes: q.nodes,
                requested: q.count,
                produced: members.len(),
            });
        }
        chosen.extend(members);
    }
    chosen.sort_by_key(|&i| (pool[i].scene, i));
    chosen.dedup();
    let samples = chosen.into_iter().map(|i| pool[i].sample.clone()).collect();
    Ok(GeneratedDataset {
        samples,
        shortfall,
        pool_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refgen::scene::{Relation, SceneObject};
    use crate::semgraph::BBox;

    fn obj(id: u32, class: &str) -> SceneObject {
        SceneObject {
            id,
            class: class.into(),
            attributes: vec!["red".into()],
            bbox: BBox::new(0.1 * id as f64, 0.1, 0.05, 0.05),
            feature: None,
        }
    }

    fn rel(s: u32, r: &str, o: u32) -> Relation {
        Relation {
            subject: s,
            relation: r.into(),
            object: o,
        }
    }

    #[test]
    fn single_slot_is_referent() {
        let scene = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![obj(1, "cup"), obj(2, "plate")],
            relations: vec![rel(1, "left of", 2)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_subgraph(&scene, 1, 1, &SamplingWeights::uniform(), &mut rng).unwrap();
        assert_eq!(s.objects, vec![1]);
        assert!(s.edges.is_empty());
        let s = sample_subgraph(&scene, 1, 2, &SamplingWeights::uniform(), &mut rng).unwrap();
        assert_eq!(s.objects, vec![1, 2]);
        assert_eq!(s.edges[0].relation, "left of");
        assert!(matches!(
            sample_subgraph(&scene, 2, 2, &SamplingWeights::uniform(), &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn inverse_frequency_draws() {
        // neighbours of classes seen 1, 4 and 9 times across the corpus
        let mut objects = vec![obj(0, "cup"), obj(1, "dog"), obj(2, "lamp"), obj(3, "vase")];
        let mut id = 10;
        for (class, extra) in [("lamp", 3), ("vase", 8)] {
            for _ in 0..extra {
                objects.push(obj(id, class));
                id += 1;
            }
        }
        let scene = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects,
            relations: vec![rel(0, "near", 1), rel(0, "near", 2), rel(0, "near", 3)],
        };
        let w = SamplingWeights::from_scenes(std::slice::from_ref(&scene), 0.5, 1.0);
        let target = [1.0, 0.5, 1.0 / 3.0];
        let total: f64 = target.iter().sum();
        let trials = 10_000;
        let mut counts = [0usize; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..trials {
            let s = sample_subgraph(&scene, 0, 2, &w, &mut rng).unwrap();
            counts[s.objects[1] as usize - 1] += 1;
        }
        for (c, t) in counts.iter().zip(target) {
            let p = t / total;
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*c as f64 - trials as f64 * p).abs() <= 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn same_attribute_never_mentioned() {
        let world = World::desk();
        let scene = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![
                SceneObject {
                    attributes: vec!["red".into(), "wooden".into()],
                    ..obj(1, "cup")
                },
                SceneObject {
                    attributes: vec!["red".into(), "metal".into()],
                    ..obj(2, "plate")
                },
            ],
            relations: vec![rel(1, "same color", 2), rel(2, "same color", 1)],
        };
        let sub = Subgraph {
            objects: vec![1, 2],
            edges: vec![SubEdge {
                subject: 0,
                object: 1,
                relation: "same color".into(),
            }],
        };
        let lib = TemplateLibrary::new();
        let t = &lib
            .get(&classify_layout(&sub.layout().unwrap()).unwrap())
            .unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (text, params) = fill_template(t, &sub, &scene, &world, &mut rng).unwrap();
            assert!(!text.split(' ').any(|w| w == "red"), "{text}");
            assert!(params
                .slots
                .iter()
                .all(|s| !s.attributes.contains(&"red".to_string())));
            assert!(text.contains("with the same color as"));
        }
    }

    #[test]
    fn fill_is_seeded() {
        let world = World::desk();
        let scene = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![obj(1, "cup")],
            relations: vec![],
        };
        let sub = Subgraph {
            objects: vec![1],
            edges: vec![],
        };
        let lib = TemplateLibrary::new();
        let t = &lib.get("1:single").unwrap()[0];
        let a = fill_template(t, &sub, &scene, &world, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = fill_template(t, &sub, &scene, &world, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.0 == "the cup" || a.0 == "the red cup");
    }
}
