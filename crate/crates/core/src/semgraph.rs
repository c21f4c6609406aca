//! Image semantic graph: objects as nodes carrying visual and spatial
//! features, k-nearest-neighbour edges carrying relative box geometry.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const BOX_TOLERANCE: f64 = 1e-6;

/// Paper default for the neighbourhood size.
pub const DEFAULT_K: usize = 5;

/// Normalized bounding box: top-left corner, width, height in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x, self.y, self.w, self.h];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Validation(format!(
                "box {self:?} has non-positive width or height"
            )));
        }
        if self.x < -BOX_TOLERANCE || self.y < -BOX_TOLERANCE {
            return Err(Error::Validation(format!(
                "box {self:?} starts outside the image"
            )));
        }
        if self.x + self.w > 1.0 + BOX_TOLERANCE || self.y + self.h > 1.0 + BOX_TOLERANCE {
            return Err(Error::Validation(format!(
                "box {self:?} extends past the image"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// `[x, y, w, h, w·h]`.
pub type SpatialFeature = [f64; 5];

/// Relative geometry of box `j` seen from box `i`.
pub type RelSpatialFeature = [f64; 5];

pub fn spatial_feature(b: &BBox) -> Result<SpatialFeature> {
    if b.w <= 0.0 || b.h <= 0.0 {
        return Err(Error::Validation(format!(
            "box {b:?} has non-positive width or height"
        )));
    }
    Ok([b.x, b.y, b.w, b.h, b.w * b.h])
}

/// Offsets of `j`'s corners from `i`'s center in units of `i`'s size, plus the area ratio.
pub fn rel_spatial_feature(i: &BBox, j: &BBox) -> Result<RelSpatialFeature> {
    if i.w <= 0.0 || i.h <= 0.0 {
        return Err(Error::Validation(format!(
            "reference box {i:?} has non-positive width or height"
        )));
    }
    let (xc, yc) = i.center();
    Ok([
        (j.x - xc) / i.w,
        (j.y - yc) / i.h,
        (j.x + j.w - xc) / i.w,
        (j.y + j.h - yc) / i.h,
        (j.w * j.h) / (i.w * i.h),
    ])
}

/// A detected (or annotated) object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u32,
    pub bbox: BBox,
    #[serde(default)]
    pub feature: Option<Vec<f64>>,
    #[serde(default)]
    pub class_label: Option<String>,
    #[serde(default)]
    pub attributes: Vec<String>,
}

impl ObjectRecord {
    pub fn new(id: u32, bbox: BBox) -> Self {
        ObjectRecord {
            id,
            bbox,
            feature: None,
            class_label: None,
            attributes: Vec::new(),
        }
    }

    pub fn with_class(mut self, class: &str) -> Self {
        self.class_label = Some(class.to_string());
        self
    }

    pub fn with_attributes(mut self, attrs: &[&str]) -> Self {
        self.attributes = attrs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_feature(mut self, f: Vec<f64>) -> Self {
        self.feature = Some(f);
        self
    }
}

/// Directed edge from node `source` (j) into node `target` (i).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEdge {
    pub target: usize,
    pub source: usize,
    pub rel: RelSpatialFeature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSemanticGraph {
    objects: Vec<ObjectRecord>,
    spatial: Vec<SpatialFeature>,
    edges: Vec<ImageEdge>,
    k: usize,
}

impl ImageSemanticGraph {
    pub fn objects(&self) -> &[ObjectRecord] {
        &self.objects
    }

    pub fn num_nodes(&self) -> usize {
        self.objects.len()
    }

    pub fn spatial(&self) -> &[SpatialFeature] {
        &self.spatial
    }

    pub fn edges(&self) -> &[ImageEdge] {
        &self.edges
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Visual feature of node `n`; errors if the object carries none.
    pub fn feature(&self, n: usize) -> Result<&[f64]> {
        self.objects[n].feature.as_deref().ok_or_else(|| {
            Error::Validation(format!(
                "object {} has no visual feature",
                self.objects[n].id
            ))
        })
    }

    /// Index of the object with the given id.
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn in_degree(&self, n: usize) -> usize {
        self.edges.iter().filter(|e| e.target == n).count()
    }
}

/// Builds the graph, wiring each node to its `min(k, N-1)` nearest other
/// nodes by box-center distance. Ties go to the smaller object id.
pub fn build_graph(objects: Vec<ObjectRecord>, k: usize) -> Result<ImageSemanticGraph> {
    if objects.is_empty() {
        return Err(Error::Validation("image has no objects".into()));
    }
    if k == 0 {
        return Err(Error::Usage("neighbourhood size k must be positive".into()));
    }
    let mut spatial = Vec::with_capacity(objects.len());
    for o in &objects {
        o.bbox.validate()?;
        spatial.push(spatial_feature(&o.bbox)?);
    }
    let centers: Vec<(f64, f64)> = objects.iter().map(|o| o.bbox.center()).collect();
    let mut edges = Vec::new();
    for i in 0..objects.len() {
        let mut others: Vec<(f64, u32, usize)> = (0..objects.len())
            .filter(|&j| j != i)
            .map(|j| {
                let dx = centers[i].0 - centers[j].0;
                let dy = centers[i].1 - centers[j].1;
                ((dx * dx + dy * dy).sqrt(), objects[j].id, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, _, j) in others.iter().take(k) {
            edges.push(ImageEdge {
                target: i,
                source: j,
                rel: rel_spatial_feature(&objects[i].bbox, &objects[j].bbox)?,
            });
        }
    }
    Ok(ImageSemanticGraph {
        objects,
        spatial,
        edges,
        k,
    })
}

fn hashed_rng(tag: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(tag.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// Deterministic unit vector for a vocabulary item (class or attribute).
pub fn anchor(kind: &str, name: &str, dim: usize) -> Vec<f64> {
    let mut rng = hashed_rng(&format!("{kind}:{name}"));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Weight of each attribute anchor relative to the class anchor.
pub const ATTRIBUTE_ANCHOR_WEIGHT: f64 = 1.0;

/// Synthesizes visual features: the class anchor plus each weighted
/// attribute's anchor, plus isotropic Gaussian noise of scale `noise`.
/// Anchors depend only on the vocabulary item; `seed` drives the noise.
pub fn synth_features(
    objects: &mut [ObjectRecord],
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<()> {
    if dim == 0 {
        return Err(Error::Usage("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for o in objects.iter_mut() {
        let class = o
            .class_label
            .as_deref()
            .ok_or_else(|| Error::Validation(format!("object {} has no class label", o.id)))?;
        let mut v = anchor("class", class, dim);
        for a in &o.attributes {
            for (x, y) in v.iter_mut().zip(anchor("attr", a, dim)) {
                *x += ATTRIBUTE_ANCHOR_WEIGHT * y;
            }
        }
        for x in v.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *x += noise * n;
        }
        o.feature = Some(v);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoxFormat {
    #[default]
    Pixel,
    Normalized,
}

/// One object entry of the objects file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub class: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

/// Objects file: one image and its objects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectsFile {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub box_format: BoxFormat,
    pub objects: Vec<ObjectEntry>,
}

impl ObjectsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }

    /// Validated object records with boxes normalized to the unit square.
    pub fn records(&self) -> Result<Vec<ObjectRecord>> {
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Validation(format!(
                "image {} has non-positive size",
                self.image_id
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        self.objects
            .iter()
            .map(|o| {
                if !seen.insert(o.id) {
                    return Err(Error::Validation(format!("duplicate object id {}", o.id)));
                }
                let [x, y, w, h] = o.bbox;
                let bbox = match self.box_format {
                    BoxFormat::Normalized => BBox::new(x, y, w, h),
                    BoxFormat::Pixel => BBox::new(
                        x / self.width,
                        y / self.height,
                        w / self.width,
                        h / self.height,
                    ),
                };
                bbox.validate()?;
                if let Some(f) = &o.feature {
                    if f.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!(
                            "object {} has a non-finite feature",
                            o.id
                        )));
                    }
                }
                Ok(ObjectRecord {
                    id: o.id,
                    bbox,
                    feature: o.feature.clone(),
                    class_label: Some(o.class.clone()),
                    attributes: o.attributes.clone(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn spatial_feature_examples() {
        assert_eq!(
            spatial_feature(&BBox::new(0.0, 0.0, 1.0, 1.0)).unwrap(),
            [0.0, 0.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            spatial_feature(&BBox::new(0.25, 0.5, 0.5, 0.25)).unwrap(),
            [0.25, 0.5, 0.5, 0.25, 0.125]
        );
        assert!(close(
            &spatial_feature(&BBox::new(0.1, 0.1, 0.2, 0.3)).unwrap(),
            &[0.1, 0.1, 0.2, 0.3, 0.06]
        ));
        assert!(spatial_feature(&BBox::new(0.1, 0.1, 0.0, 0.3)).is_err());
    }

    #[test]
    fn rel_spatial_examples() {
        let b = BBox::new(0.2, 0.3, 0.1, 0.2);
        assert!(close(
            &rel_spatial_feature(&b, &b).unwrap(),
            &[-0.5, -0.5, 0.5, 0.5, 1.0]
        ));
        let right = BBox::new(0.3, 0.3, 0.1, 0.2);
        assert!(close(
            &rel_spatial_feature(&b, &right).unwrap(),
            &[0.5, -0.5, 1.5, 0.5, 1.0]
        ));
        let i = BBox::new(0.0, 0.0, 0.5, 0.5);
        let j = BBox::new(0.5, 0.5, 0.25, 0.25);
        assert!(close(
            &rel_spatial_feature(&i, &j).unwrap(),
            &[0.5, 0.5, 1.0, 1.0, 0.25]
        ));
        assert!(rel_spatial_feature(&BBox::new(0.0, 0.0, 0.0, 0.1), &j).is_err());
    }

    #[test]
    fn box_validation_tolerance() {
        assert!(BBox::new(0.5, 0.5, 0.5 + 5e-7, 0.5).validate().is_ok());
        assert!(BBox::new(0.5, 0.5, 0.51, 0.5).validate().is_err());
        assert!(BBox::new(-0.01, 0.5, 0.1, 0.1).validate().is_err());
    }

    #[test]
    fn single_node_has_no_edges() {
        let g = build_graph(vec![ObjectRecord::new(7, BBox::new(0.1, 0.1, 0.2, 0.2))], 5).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn three_nodes_two_incoming_each() {
        let objs = (0..3)
            .map(|i| ObjectRecord::new(i, BBox::new(0.1 * i as f64, 0.2, 0.1, 0.1)))
            .collect();
        let g = build_graph(objs, 5).unwrap();
        for n in 0..3 {
            assert_eq!(g.in_degree(n), 2);
        }
        assert!(g.edges().iter().all(|e| e.source != e.target));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(build_graph(vec![], 5), Err(Error::Validation(_))));
    }

    #[test]
    fn tie_break_prefers_smaller_id() {
        // Node 0 in the middle, 1 and 2 equidistant on either side; ids reversed.
        let objs = vec![
            ObjectRecord::new(5, BBox::new(0.375, 0.5, 0.25, 0.25)),
            ObjectRecord::new(9, BBox::new(0.125, 0.5, 0.25, 0.25)),
            ObjectRecord::new(3, BBox::new(0.625, 0.5, 0.25, 0.25)),
        ];
        let g = build_graph(objs, 1).unwrap();
        let e0: Vec<_> = g.edges().iter().filter(|e| e.target == 0).collect();
        assert_eq!(e0.len(), 1);
        assert_eq!(e0[0].source, 2);
    }

    #[test]
    fn synth_features_contract() {
        let mk = |id, class: &str| {
            ObjectRecord::new(id, BBox::new(0.0, 0.0, 0.5, 0.5)).with_class(class)
        };
        let mut objs = vec![mk(0, "cup"), mk(1, "cup"), mk(2, "table")];
        synth_features(&mut objs, 16, 0.0, 1).unwrap();
        assert_eq!(objs[0].feature, objs[1].feature);
        let a = objs[0].feature.as_ref().unwrap();
        let b = objs[2].feature.as_ref().unwrap();
        let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!(cos < 1.0 - 1e-6);

        let mut r1 = vec![mk(0, "cup"), mk(1, "table")];
        let mut r2 = r1.clone();
        synth_features(&mut r1, 16, 0.1, 42).unwrap();
        synth_features(&mut r2, 16, 0.1, 42).unwrap();
        assert_eq!(r1, r2);

        let mut missing = vec![ObjectRecord::new(0, BBox::new(0.0, 0.0, 0.5, 0.5))];
        assert!(matches!(
            synth_features(&mut missing, 4, 0.0, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn pixel_boxes_normalized_on_load() {
        let f = ObjectsFile {
            image_id: "img".into(),
            width: 200.0,
            height: 100.0,
            box_format: BoxFormat::Pixel,
            objects: vec![ObjectEntry {
                id: 1,
                bbox: [50.0, 25.0, 100.0, 50.0],
                class: "cup".into(),
                attributes: vec!["red".into()],
                feature: None,
            }],
        };
        let recs = f.records().unwrap();
        assert_eq!(recs[0].bbox, BBox::new(0.25, 0.25, 0.5, 0.5));
    }
}
