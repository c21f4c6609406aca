//! Value-level forms of the attention-map modules. The model records the same
//! arithmetic on a tape; these versions serve inspection and checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-edge attention maps combine at a node with several modifiers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    #[default]
    Sum,
    Max,
    Min,
}

impl std::str::FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(MergeMode::Sum),
            "max" => Ok(MergeMode::Max),
            "min" => Ok(MergeMode::Min),
            other => Err(Error::Usage(format!(
                "unknown merge mode {other:?} (sum, max, min)"
            ))),
        }
    }
}

impl std::fmt::Display for MergeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MergeMode::Sum => "sum",
            MergeMode::Max => "max",
            MergeMode::Min => "min",
        })
    }
}

/// Edge weights stored against an explicit `(target, source)` edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseGamma {
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl SparseGamma {
    pub fn new(edges: Vec<(usize, usize)>, weights: Vec<f64>) -> Result<Self> {
        if edges.len() != weights.len() {
            return Err(Error::dim(
                "transfer",
                format!("{} weights for {} edges", weights.len(), edges.len()),
            ));
        }
        Ok(SparseGamma { edges, weights })
    }

    /// Weight on edge `target <- source`, zero when the edge is absent.
    pub fn get(&self, target: usize, source: usize) -> f64 {
        self.edges
            .iter()
            .zip(&self.weights)
            .filter(|(e, _)| **e == (target, source))
            .map(|(_, w)| w)
            .sum()
    }
}

/// `out[i] = Σ_j gamma[i, j] · lambda[j]`.
pub fn transfer(gamma: &SparseGamma, lambda: &[f64]) -> Result<Vec<f64>> {
    let n = lambda.len();
    let mut out = vec![0.0; n];
    for (&(i, j), g) in gamma.edges.iter().zip(&gamma.weights) {
        if i >= n || j >= n {
            return Err(Error::dim(
                "transfer",
                format!("edge ({i}, {j}) outside {n} nodes"),
            ));
        }
        out[i] += g * lambda[j];
    }
    Ok(out)
}

/// Elementwise sum, max or min of equal-length maps.
pub fn merge(maps: &[Vec<f64>], mode: MergeMode) -> Result<Vec<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Usage("merge of an empty set".into()))?;
    let mut out = first.clone();
    for m in &maps[1..] {
        if m.len() != out.len() {
            return Err(Error::dim("merge", "attention maps differ in length"));
        }
        for (o, v) in out.iter_mut().zip(m) {
            *o = match mode {
                MergeMode::Sum => *o + v,
                MergeMode::Max => o.max(*v),
                MergeMode::Min => o.min(*v),
            };
        }
    }
    Ok(out)
}

/// Divides by the largest absolute entry when it exceeds 1.
pub fn norm(lambda: &[f64]) -> Vec<f64> {
    let m = lambda.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 1.0 {
        lambda.iter().map(|v| v / m).collect()
    } else {
        lambda.to_vec()
    }
}
