use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::data::Instance;

/// Split names keyed by node count; everything above three shares the last.
pub const SPLIT_NAMES: [&str; 4] = ["one", "two", "three", ">=four"];

pub fn split_index(node_count: usize) -> usize {
    node_count.clamp(1, 4) - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub expression: String,
    pub node_count: usize,
    pub num_objects: usize,
    pub target: usize,
    pub predicted: usize,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.target == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub name: String,
    pub count: usize,
    pub correct: usize,
    /// Zero for an empty split.
    pub accuracy: f64,
    /// Mean of `1/N` over the split's samples.
    pub chance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub chance: f64,
    pub splits: Vec<SplitScore>,
    pub predictions: Vec<Prediction>,
}

fn ratio(a: f64, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a / b as f64
    }
}

impl EvalReport {
    pub fn from_predictions(predictions: Vec<Prediction>) -> Self {
        let mut counts = [0usize; 4];
        let mut correct = [0usize; 4];
        let mut chance = [0f64; 4];
        for p in &predictions {
            let s = split_index(p.node_count);
            counts[s] += 1;
            correct[s] += p.correct() as usize;
            chance[s] += 1.0 / p.num_objects as f64;
        }
        let splits = SPLIT_NAMES
            .iter()
            .enumerate()
            .map(|(s, name)| SplitScore {
                name: name.to_string(),
                count: counts[s],
                correct: correct[s],
                accuracy: ratio(correct[s] as f64, counts[s]),
                chance: ratio(chance[s], counts[s]),
            })
            .collect();
        let total = predictions.len();
        let all_correct = correct.iter().sum();
        EvalReport {
            total,
            correct: all_correct,
            accuracy: ratio(all_correct as f64, total),
            chance: ratio(chance.iter().sum(), total),
            splits,
            predictions,
        }
    }

    pub fn split(&self, name: &str) -> Option<&SplitScore> {
        self.splits.iter().find(|s| s.name == name)
    }

    /// Accuracy over samples with at least `min_nodes` nodes.
    pub fn accuracy_from(&self, min_nodes: usize) -> f64 {
        let (c, n) = self
            .predictions
            .iter()
            .filter(|p| p.node_count >= min_nodes)
            .fold((0usize, 0usize), |(c, n), p| {
                (c + p.correct() as usize, n + 1)
            });
        ratio(c as f64, n)
    }

    /// Splits whose accuracy exceeds twice their chance level.
    pub fn bias_alarms(&self) -> Vec<String> {
        self.splits
            .iter()
            .filter(|s| s.count > 0 && s.accuracy > 2.0 * s.chance)
            .map(|s| s.name.clone())
            .collect()
    }

    /// Report without per-sample records.
    pub fn summary(&self) -> EvalReport {
        EvalReport {
            predictions: Vec::new(),
            ..self.clone()
        }
    }
}

pub(crate) fn prediction(inst: &Instance, predicted: usize) -> Prediction {
    Prediction {
        expression: inst.expression.clone(),
        node_count: inst.node_count,
        num_objects: inst.num_objects(),
        target: inst.target,
        predicted,
    }
}

/// Aligned text table: one row per named report, columns overall then splits.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>8}", "model", "overall");
    for name in SPLIT_NAMES {
        let _ = write!(out, "  {name:>8}");
    }
    out.push('\n');
    for (name, r) in rows {
        let _ = write!(out, "{name:<width$}  {:>8.2}", 100.0 * r.accuracy);
        for s in &r.splits {
            if s.count == 0 {
                let _ = write!(out, "  {:>8}", "-");
            } else {
                let _ = write!(out, "  {:>8.2}", 100.0 * s.accuracy);
            }
        }
        out.push('\n');
    }
    out
}
