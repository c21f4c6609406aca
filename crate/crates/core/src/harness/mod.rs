//! Training, evaluation by node-count split, ablations and a
//! language-blind bias probe.

mod ablate;
mod baseline;
mod data;
mod report;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, Sgmn, Vocab};
use crate::numkernel::{AdamConfig, ParamSnapshot, ParamStore};
use crate::semgraph::DEFAULT_K;

pub use ablate::{run_ablations, AblationRow, AblationTable, Variant};
pub use baseline::{language_blind_baseline, BlindReport};
pub use data::{build_images, build_instances, build_vocab, split_of, ImageSettings, Instance};
pub use report::{render_table, split_index, EvalReport, Prediction, SplitScore, SPLIT_NAMES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Upper bound on epochs.
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub model: ModelConfig,
    /// Scale of the Gaussian noise in synthetic features.
    pub feature_noise: f64,
    /// Nearest neighbours kept per image node.
    pub k: usize,
    pub scenes: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 20,
            patience: 3,
            seed: 0,
            model: ModelConfig::default(),
            feature_noise: 0.05,
            k: DEFAULT_K,
            scenes: None,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.k == 0 {
            return Err(Error::Validation(
                "batch_size, epochs and k must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::Validation(format!(
                "feature_noise {} must be non-negative",
                self.feature_noise
            )));
        }
        self.model.validate()
    }

    pub fn image_settings(&self) -> ImageSettings {
        ImageSettings {
            feature_dim: self.model.feature_dim,
            noise: self.feature_noise,
            k: self.k,
            seed: self.seed,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Absent when there is no validation set.
    pub val_accuracy: Option<f64>,
}

/// Trained weights with everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub vocab: Vocab,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub batch_losses: Vec<f64>,
    pub params: ParamSnapshot,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Sgmn> {
        let rows = self
            .params
            .params
            .get("embed")
            .and_then(|t| t.shape().first().copied());
        if rows != Some(self.vocab.len()) {
            return Err(Error::Vocabulary(format!(
                "embedding table has {rows:?} rows for a {}-word vocabulary",
                self.vocab.len()
            )));
        }
        let mut m = Sgmn::new(
            self.train.model.clone(),
            self.vocab.clone(),
            self.train.seed,
        )?;
        self.params.restore(m.store_mut())?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Load(format!("checkpoint: {e}")))
    }
}

pub struct TrainOutcome {
    pub model: Sgmn,
    pub checkpoint: Checkpoint,
}

fn check_finite(store: &ParamStore, what: &str) -> Result<()> {
    for id in store.ids() {
        if store.grad(id).iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "{what}: non-finite gradient in {}",
                store.name(id)
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over `batch`, with its gradient left in the store,
/// and the index of the first sample whose loss is not finite.
fn batch_gradient(model: &mut Sgmn, batch: &[&Instance]) -> Result<(f64, Option<usize>)> {
    model.store_mut().zero_grad();
    let mut total = 0.0;
    let mut bad = None;
    for (k, inst) in batch.iter().enumerate() {
        let (l, _) = model.accumulate_gradient(&inst.graph, &inst.image, inst.target)?;
        if !l.is_finite() && bad.is_none() {
            bad = Some(k);
        }
        total += l;
    }
    model.store_mut().scale_grad(1.0 / batch.len() as f64);
    Ok((total / batch.len() as f64, bad))
}

/// Trains on `train` with Adam over shuffled minibatches, keeping the
/// weights of the best validation epoch. The vocabulary comes from `train`
/// alone. Deterministic in `(cfg, train, val)`.
pub fn train(cfg: &TrainConfig, train: &[Instance], val: &[Instance]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let vocab = build_vocab(train);
    let mut model = Sgmn::new(cfg.model.clone(), vocab.clone(), cfg.seed)?;
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut batch_losses = Vec::new();
    let mut best: Option<(f64, usize, ParamSnapshot)> = None;
    let mut global_batch = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, bad) = batch_gradient(&mut model, &batch)?;
            let what = format!("epoch {epoch} batch {b} (batch #{global_batch})");
            if let Some(k) = bad {
                return Err(Error::Diverged(format!(
                    "{what}: loss {loss}; first non-finite sample {:?}",
                    batch[k].expression
                )));
            }
            check_finite(model.store(), &what)?;
            model.store_mut().adam_step(&adam)?;
            sum += loss * batch.len() as f64;
            batch_losses.push(loss);
            global_batch += 1;
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, val, 1)?.accuracy)
        };
        history.push(EpochRecord {
            epoch,
            mean_loss: sum / train.len() as f64,
            val_accuracy,
        });
        let score = val_accuracy.unwrap_or(0.0);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_accuracy.is_none() || score > *b,
        };
        if improved {
            best = Some((score, epoch, ParamSnapshot::capture(model.store())));
        } else if cfg.patience > 0 && epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    params.restore(model.store_mut())?;
    let checkpoint = Checkpoint {
        train: cfg.clone(),
        vocab,
        best_epoch,
        history,
        batch_losses,
        params,
    };
    Ok(TrainOutcome { model, checkpoint })
}

/// Predicts every instance; `threads > 1` splits the work into contiguous
/// chunks merged in input order.
pub fn evaluate(model: &Sgmn, instances: &[Instance], threads: usize) -> Result<EvalReport> {
    let run = |chunk: &[Instance]| -> Result<Vec<Prediction>> {
        chunk
            .iter()
            .map(|inst| {
                let trace = model.forward(&inst.graph, &inst.image)?;
                Ok(report::prediction(inst, predict(&trace)))
            })
            .collect()
    };
    let threads = threads.max(1);
    let predictions = if threads == 1 || instances.len() < 2 * threads {
        run(instances)?
    } else {
        let size = instances.len().div_ceil(threads);
        let parts: Vec<Result<Vec<Prediction>>> = std::thread::scope(|s| {
            let handles: Vec<_> = instances
                .chunks(size)
                .map(|c| s.spawn(move || run(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(instances.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    Ok(EvalReport::from_predictions(predictions))
}

#[cfg(test)]
mod tests;
