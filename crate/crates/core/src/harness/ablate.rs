use serde::{Deserialize, Serialize};

use super::data::Instance;
use super::report::{render_table, EvalReport};
use super::{evaluate, train, TrainConfig};
use crate::error::Result;
use crate::model::{MergeMode, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoTransfer,
    NoNorm,
    MaxMerge,
    MinMerge,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoTransfer,
        Variant::NoNorm,
        Variant::MaxMerge,
        Variant::MinMerge,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTransfer => "w/o transfer",
            Variant::NoNorm => "w/o norm",
            Variant::MaxMerge => "max merge",
            Variant::MinMerge => "min merge",
        }
    }

    /// `base` with this variant's flags; the full model uses sum merge.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = ModelConfig {
            merge: MergeMode::Sum,
            enable_transfer: true,
            enable_norm: true,
            ..base.clone()
        };
        match self {
            Variant::Full => {}
            Variant::NoTransfer => c.enable_transfer = false,
            Variant::NoNorm => c.enable_norm = false,
            Variant::MaxMerge => c.merge = MergeMode::Max,
            Variant::MinMerge => c.merge = MergeMode::Min,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub best_epoch: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, v: Variant) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.variant == v).map(|r| &r.report)
    }

    pub fn render(&self) -> String {
        let rows: Vec<(String, &EvalReport)> = self
            .rows
            .iter()
            .map(|r| (r.variant.label().to_string(), &r.report))
            .collect();
        render_table(&rows)
    }
}

/// Trains `variants` with identical seed and data order and evaluates each
/// on `eval`.
pub fn run_ablations(
    cfg: &TrainConfig,
    variants: &[Variant],
    train_set: &[Instance],
    val: &[Instance],
    eval: &[Instance],
    threads: usize,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let vcfg = TrainConfig {
            model: variant.apply(&cfg.model),
            ..cfg.clone()
        };
        let out = train(&vcfg, train_set, val)?;
        rows.push(AblationRow {
            variant,
            best_epoch: out.checkpoint.best_epoch,
            report: evaluate(&out.model, eval, threads)?,
        });
    }
    Ok(AblationTable { rows })
}
