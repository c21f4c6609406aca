use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::langgraph::{parse_expression, Grammar, LanguageSceneGraph};
use crate::model::Vocab;
use crate::refgen::{ExpressionSample, GroundTruthSceneGraph, Split};
use crate::semgraph::{build_graph, synth_features, ImageSemanticGraph};

/// Feature synthesis and graph construction settings for a scene corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSettings {
    pub feature_dim: usize,
    pub noise: f64,
    pub k: usize,
    pub seed: u64,
}

/// One grounding problem: a parsed expression over an image graph.
#[derive(Clone, Debug)]
pub struct Instance {
    pub expression: String,
    pub graph: LanguageSceneGraph,
    pub image: Arc<ImageSemanticGraph>,
    /// Index of the referent among the image's objects.
    pub target: usize,
    pub node_count: usize,
    pub split: Split,
}

impl Instance {
    pub fn num_objects(&self) -> usize {
        self.image.num_nodes()
    }
}

/// Per-scene feature seed; scene `i`'s features depend only on `(seed, i)`.
fn scene_seed(seed: u64, scene: usize) -> u64 {
    seed ^ (scene as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the image graph of every scene. Objects without a stored feature
/// get a synthetic one.
pub fn build_images(
    scenes: &[GroundTruthSceneGraph],
    settings: &ImageSettings,
) -> Result<Vec<Arc<ImageSemanticGraph>>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut records = s.object_records();
            if records.iter().any(|r| r.feature.is_none()) {
                for r in records.iter_mut() {
                    r.feature = None;
                }
                synth_features(
                    &mut records,
                    settings.feature_dim,
                    settings.noise,
                    scene_seed(settings.seed, i),
                )?;
            }
            build_graph(records, settings.k).map(Arc::new)
        })
        .collect()
}

/// Parses every sample and pairs it with its scene's image graph.
pub fn build_instances(
    samples: &[ExpressionSample],
    scenes: &[GroundTruthSceneGraph],
    images: &[Arc<ImageSemanticGraph>],
    grammar: &Grammar,
) -> Result<Vec<Instance>> {
    let by_id: BTreeMap<&str, usize> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.image_id.as_str(), i))
        .collect();
    samples
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let &si = by_id.get(s.scene_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("sample {n}: unknown scene {:?}", s.scene_id))
            })?;
            let image = images[si].clone();
            let target = image.index_of(s.referent).ok_or_else(|| {
                Error::Validation(format!(
                    "sample {n}: referent {} not in scene {}",
                    s.referent, s.scene_id
                ))
            })?;
            let graph = parse_expression(&s.expression, grammar)?;
            Ok(Instance {
                expression: s.expression.clone(),
                node_count: graph.nodes().len(),
                graph,
                image,
                target,
                split: s.split,
            })
        })
        .collect()
}

/// Vocabulary over the phrase and relation words of the given instances.
pub fn build_vocab<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Vocab {
    Vocab::from_tokens(instances.into_iter().flat_map(|i| {
        let g = &i.graph;
        g.nodes()
            .iter()
            .flat_map(|n| n.words.iter())
            .chain(g.edges().iter().flat_map(|e| e.relation.iter()))
            .cloned()
            .collect::<Vec<_>>()
    }))
}

pub fn split_of(instances: &[Instance], split: Split) -> Vec<Instance> {
    instances
        .iter()
        .filter(|i| i.split == split)
        .cloned()
        .collect()
}
