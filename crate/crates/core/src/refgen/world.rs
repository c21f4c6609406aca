use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{BlockRule, GroundTruthSceneGraph, Relation, SceneObject};
use crate::error::{Error, Result};
use crate::langgraph::{Grammar, DESK_ATTRIBUTES, DESK_CLASSES};
use crate::semgraph::BBox;

/// Vocabulary and scene rules of a generation world.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub classes: Vec<String>,
    /// Category name and its attribute words.
    pub attribute_categories: Vec<(String, Vec<String>)>,
    /// Relations derived from box geometry.
    pub geometric_relations: Vec<String>,
    /// Categories that yield `same <category>` relations.
    pub same_attribute_categories: Vec<String>,
    pub blocklist: Vec<BlockRule>,
    pub blocked_classes: Vec<String>,
}

const GEOMETRIC: [&str; 4] = ["left of", "right of", "above", "below"];

/// Nearest neighbours each object is related to in synthetic scenes.
pub const SYNTH_RELATED_NEIGHBOURS: usize = 3;

/// Surface words for a relation class; same-attribute classes read
/// "with the same <category> as".
pub fn relation_surface(relation: &str) -> String {
    match relation.strip_prefix("same ") {
        Some(cat) => format!("with the same {cat} as"),
        None => relation.to_string(),
    }
}

impl World {
    /// Desk-scale world matching the shipped grammar lexicon.
    pub fn desk() -> Self {
        World {
            classes: DESK_CLASSES.iter().map(|s| s.to_string()).collect(),
            attribute_categories: DESK_ATTRIBUTES
                .iter()
                .map(|(c, v)| (c.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
            geometric_relations: GEOMETRIC.iter().map(|s| s.to_string()).collect(),
            same_attribute_categories: vec!["color".into(), "material".into(), "shape".into()],
            blocklist: vec![
                BlockRule::new(Some("table"), "above", None),
                BlockRule::new(Some("lamp"), "below", Some("cup")),
                BlockRule::new(Some("dog"), "above", Some("girl")),
            ],
            blocked_classes: vec![],
        }
    }

    pub fn category_of(&self, attribute: &str) -> Option<&str> {
        self.attribute_categories
            .iter()
            .find(|(_, words)| words.iter().any(|w| w == attribute))
            .map(|(c, _)| c.as_str())
    }

    pub fn attributes(&self) -> impl Iterator<Item = &String> {
        self.attribute_categories.iter().flat_map(|(_, w)| w)
    }

    pub fn is_attribute(&self, a: &str) -> bool {
        self.category_of(a).is_some()
    }

    /// Every relation class a prepared scene may contain.
    pub fn relation_classes(&self) -> Vec<String> {
        self.geometric_relations
            .iter()
            .cloned()
            .chain(
                self.same_attribute_categories
                    .iter()
                    .map(|c| format!("same {c}")),
            )
            .collect()
    }

    /// Grammar able to parse every expression this world generates.
    pub fn grammar(&self) -> Result<Grammar> {
        let attrs: Vec<String> = self.attributes().cloned().collect();
        let rels: Vec<String> = self
            .relation_classes()
            .iter()
            .map(|r| relation_surface(r))
            .collect();
        Grammar::new(&self.classes, &attrs, &rels)
    }
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let w = rng.random_range(0.08..0.25);
    let h = rng.random_range(0.08..0.25);
    BBox::new(
        rng.random_range(0.0..1.0 - w),
        rng.random_range(0.0..1.0 - h),
        w,
        h,
    )
}

/// Direction of `s` relative to `o` along the dominant axis of their center offset.
fn geometric_relation(s: &BBox, o: &BBox) -> &'static str {
    let (sx, sy) = s.center();
    let (ox, oy) = o.center();
    let (dx, dy) = (sx - ox, sy - oy);
    if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            "left of"
        } else {
            "right of"
        }
    } else if dy < 0.0 {
        "above"
    } else {
        "below"
    }
}

/// Raw random scenes with `min_objects..=max_objects` objects each. Every
/// object carries one attribute per category and is related geometrically to
/// its nearest neighbours. Scene `i` depends only on `(seed, i)`.
pub fn synth_scenes(
    world: &World,
    count: usize,
    min_objects: usize,
    max_objects: usize,
    seed: u64,
) -> Result<Vec<GroundTruthSceneGraph>> {
    if min_objects == 0 || min_objects > max_objects {
        return Err(Error::Usage(format!(
            "bad object range {min_objects}..={max_objects}"
        )));
    }
    if world.classes.is_empty() || world.attribute_categories.iter().any(|(_, w)| w.is_empty()) {
        return Err(Error::Usage("world vocabulary is empty".into()));
    }
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let n = rng.random_range(min_objects..=max_objects);
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
        for id in 0..n as u32 {
            // repeated classes make relations necessary to disambiguate
            let class = if !objects.is_empty() && rng.random_bool(0.4) {
                objects[rng.random_range(0..objects.len())].class.clone()
            } else {
                world.classes[rng.random_range(0..world.classes.len())].clone()
            };
            let attributes = world
                .attribute_categories
                .iter()
                .map(|(_, words)| words[rng.random_range(0..words.len())].clone())
                .collect();
            objects.push(SceneObject {
                id,
                class,
                attributes,
                bbox: random_box(&mut rng),
                feature: None,
            });
        }
        let mut relations = Vec::new();
        for s in &objects {
            let (sx, sy) = s.bbox.center();
            let mut others: Vec<(f64, u32, &SceneObject)> = objects
                .iter()
                .filter(|o| o.id != s.id)
                .map(|o| {
                    let (ox, oy) = o.bbox.center();
                    ((sx - ox).hypot(sy - oy), o.id, o)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, _, o) in others.iter().take(SYNTH_RELATED_NEIGHBOURS) {
                relations.push(Relation {
                    subject: s.id,
                    relation: geometric_relation(&s.bbox, &o.bbox).to_string(),
                    object: o.id,
                });
            }
        }
        scenes.push(GroundTruthSceneGraph {
            image_id: format!("scene-{i:05}"),
            objects,
            relations,
        });
    }
    Ok(scenes)
}
