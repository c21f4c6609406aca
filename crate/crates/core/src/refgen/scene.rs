use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::world::World;
use crate::error::{Error, Result};
use crate::numkernel::write_atomic;
use crate::semgraph::{BBox, BoxFormat, ObjectEntry, ObjectRecord, ObjectsFile};

/// Most attributes an object keeps after preparation.
pub const MAX_ATTRIBUTES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub class: String,
    pub attributes: Vec<String>,
    pub bbox: BBox,
    pub feature: Option<Vec<f64>>,
}

/// `subject` stands in `relation` to `object`, as in (cup, left of, plate).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub subject: u32,
    pub relation: String,
    pub object: u32,
}

/// Annotated scene used by the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSceneGraph {
    pub image_id: String,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

/// Removes every relation matching `relation` whose endpoints match the
/// optional class constraints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRule {
    pub subject_class: Option<String>,
    pub relation: String,
    pub object_class: Option<String>,
}

impl BlockRule {
    pub fn new(subject_class: Option<&str>, relation: &str, object_class: Option<&str>) -> Self {
        BlockRule {
            subject_class: subject_class.map(str::to_string),
            relation: relation.to_string(),
            object_class: object_class.map(str::to_string),
        }
    }

    fn matches(&self, s: &str, rel: &str, o: &str) -> bool {
        self.relation == rel
            && self.subject_class.as_deref().is_none_or(|c| c == s)
            && self.object_class.as_deref().is_none_or(|c| c == o)
    }
}

impl GroundTruthSceneGraph {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Checks ids, endpoints, duplicate triples and attribute counts.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::Validation(format!(
                    "scene {}: duplicate object id {}",
                    self.image_id, o.id
                )));
            }
            if o.attributes.is_empty() || o.attributes.len() > MAX_ATTRIBUTES {
                return Err(Error::Validation(format!(
                    "scene {}: object {} has {} attributes (1 to {MAX_ATTRIBUTES} allowed)",
                    self.image_id,
                    o.id,
                    o.attributes.len()
                )));
            }
            o.bbox.validate()?;
        }
        let mut triples = BTreeSet::new();
        for r in &self.relations {
            if !ids.contains(&r.subject) || !ids.contains(&r.object) {
                return Err(Error::Validation(format!(
                    "scene {}: relation ({}, {}, {}) references a missing object",
                    self.image_id, r.subject, r.relation, r.object
                )));
            }
            if r.subject == r.object {
                return Err(Error::Validation(format!(
                    "scene {}: self relation on {}",
                    self.image_id, r.subject
                )));
            }
            if !triples.insert(r) {
                return Err(Error::Validation(format!(
                    "scene {}: duplicate relation ({}, {}, {})",
                    self.image_id, r.subject, r.relation, r.object
                )));
            }
        }
        Ok(())
    }

    /// Object records for the image graph, in scene order.
    pub fn object_records(&self) -> Vec<ObjectRecord> {
        self.objects
            .iter()
            .map(|o| ObjectRecord {
                id: o.id,
                bbox: o.bbox,
                feature: o.feature.clone(),
                class_label: Some(o.class.clone()),
                attributes: o.attributes.clone(),
            })
            .collect()
    }
}

/// Drops blocked classes and relations, trims attributes, and adds a
/// same-attribute relation in both directions for every pair sharing an
/// attribute in one of the world's same-attribute categories.
pub fn prepare_scene(raw: &GroundTruthSceneGraph, world: &World) -> GroundTruthSceneGraph {
    let objects: Vec<SceneObject> = raw
        .objects
        .iter()
        .filter(|o| !world.blocked_classes.contains(&o.class))
        .map(|o| {
            let mut o = o.clone();
            o.attributes.truncate(MAX_ATTRIBUTES);
            o
        })
        .collect();
    let class_of = |id: u32| {
        objects
            .iter()
            .find(|o| o.id == id)
            .map(|o| o.class.as_str())
    };
    let mut relations: BTreeSet<Relation> = raw
        .relations
        .iter()
        .filter(|r| match (class_of(r.subject), class_of(r.object)) {
            (Some(s), Some(o)) => !world.blocklist.iter().any(|b| b.matches(s, &r.relation, o)),
            _ => false,
        })
        .cloned()
        .collect();
    for a in &objects {
        for b in &objects {
            if a.id == b.id {
                continue;
            }
            for cat in &world.same_attribute_categories {
                let shared = a.attributes.iter().any(|x| {
                    world.category_of(x) == Some(cat.as_str()) && b.attributes.contains(x)
                });
                if shared {
                    relations.insert(Relation {
                        subject: a.id,
                        relation: format!("same {cat}"),
                        object: b.id,
                    });
                }
            }
        }
    }
    GroundTruthSceneGraph {
        image_id: raw.image_id.clone(),
        objects,
        relations: relations.into_iter().collect(),
    }
}

/// One line of a scenes file: an objects file plus relation triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub box_format: BoxFormat,
    pub objects: Vec<ObjectEntry>,
    #[serde(default)]
    pub relations: Vec<Relation>,
}

impl SceneRecord {
    pub fn to_scene(&self) -> Result<GroundTruthSceneGraph> {
        let file = ObjectsFile {
            image_id: self.image_id.clone(),
            width: self.width,
            height: self.height,
            box_format: self.box_format,
            objects: self.objects.clone(),
        };
        let objects = file
            .records()?
            .into_iter()
            .map(|r| SceneObject {
                id: r.id,
                class: r.class_label.unwrap_or_default(),
                attributes: r.attributes,
                bbox: r.bbox,
                feature: r.feature,
            })
            .collect();
        let g = GroundTruthSceneGraph {
            image_id: self.image_id.clone(),
            objects,
            relations: self.relations.clone(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_scene(g: &GroundTruthSceneGraph) -> Self {
        SceneRecord {
            image_id: g.image_id.clone(),
            width: 1.0,
            height: 1.0,
            box_format: BoxFormat::Normalized,
            objects: g
                .objects
                .iter()
                .map(|o| ObjectEntry {
                    id: o.id,
                    bbox: [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h],
                    class: o.class.clone(),
                    attributes: o.attributes.clone(),
                    feature: o.feature.clone(),
                })
                .collect(),
            relations: g.relations.clone(),
        }
    }
}

/// Reads a JSON Lines scenes file; blank lines are skipped.
pub fn load_scenes(path: &Path) -> Result<Vec<GroundTruthSceneGraph>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Load(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec.to_scene()?);
    }
    Ok(out)
}

pub fn save_scenes(scenes: &[GroundTruthSceneGraph], path: &Path) -> Result<()> {
    let mut text = String::new();
    for s in scenes {
        text.push_str(&serde_json::to_string(&SceneRecord::from_scene(s))?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: u32, class: &str, attrs: &[&str]) -> SceneObject {
        SceneObject {
            id,
            class: class.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            bbox: BBox::new(0.1 * id as f64, 0.1, 0.1, 0.1),
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
    fn shared_color_added_both_ways() {
        let raw = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![obj(1, "cup", &["red"]), obj(2, "plate", &["red", "round"])],
            relations: vec![],
        };
        let g = prepare_scene(&raw, &World::desk());
        assert!(g.relations.contains(&rel(1, "same color", 2)));
        assert!(g.relations.contains(&rel(2, "same color", 1)));
        assert_eq!(g.relations.len(), 2);
    }

    #[test]
    fn blocklisted_edge_removed() {
        let mut world = World::desk();
        world.blocklist = vec![BlockRule::new(Some("nose"), "left of", Some("eyes"))];
        let raw = GroundTruthSceneGraph {
            image_id: "face".into(),
            objects: vec![
                obj(1, "nose", &["pink"]),
                obj(2, "eyes", &["blue"]),
                obj(3, "cup", &["green"]),
            ],
            relations: vec![
                rel(1, "left of", 2),
                rel(3, "left of", 2),
                rel(2, "right of", 1),
            ],
        };
        let g = prepare_scene(&raw, &world);
        assert_eq!(
            g.relations,
            vec![rel(2, "right of", 1), rel(3, "left of", 2)]
        );
    }

    #[test]
    fn no_shared_attributes_leaves_relations() {
        let raw = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![obj(1, "cup", &["red"]), obj(2, "plate", &["blue"])],
            relations: vec![rel(1, "left of", 2)],
        };
        assert_eq!(prepare_scene(&raw, &World::desk()).relations, raw.relations);
    }

    #[test]
    fn validation_rules() {
        let mut g = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![obj(1, "cup", &["red"]), obj(2, "plate", &["blue"])],
            relations: vec![rel(1, "left of", 2), rel(1, "left of", 2)],
        };
        assert!(g.validate().is_err());
        g.relations.pop();
        g.validate().unwrap();
        g.relations.push(rel(1, "left of", 9));
        assert!(g.validate().is_err());
        g.relations.pop();
        g.objects[0].attributes.clear();
        assert!(g.validate().is_err());
    }

    #[test]
    fn scenes_file_round_trip() {
        let g = GroundTruthSceneGraph {
            image_id: "t".into(),
            objects: vec![obj(1, "cup", &["red"]), obj(2, "plate", &["blue"])],
            relations: vec![rel(1, "left of", 2)],
        };
        let dir = std::env::temp_dir().join(format!("sgmn-scenes-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("scenes.jsonl");
        save_scenes(std::slice::from_ref(&g), &p).unwrap();
        assert_eq!(load_scenes(&p).unwrap(), vec![g]);
        std::fs::remove_dir_all(dir).ok();
    }
}
