use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Instance;
use super::report::{prediction, EvalReport};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::argmax;
use crate::numkernel::{Mlp, ParamStore, Tape, Tensor, Var};

/// Language-blind result: accuracy plus the splits scoring above twice chance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindReport {
    pub report: EvalReport,
    pub bias_alarms: Vec<String>,
}

struct BlindScorer {
    store: ParamStore,
    mlp: Mlp,
}

impl BlindScorer {
    fn new(feature_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "blind", &[feature_dim + 5, hidden, 1], &mut rng)?;
        Ok(BlindScorer { store, mlp })
    }

    /// Per-object scores from visual and box features only.
    fn logits(&self, tape: &mut Tape, inst: &Instance) -> Result<Var> {
        let g = &inst.image;
        let mut scores = Vec::with_capacity(g.num_nodes());
        for i in 0..g.num_nodes() {
            let mut x = g.feature(i)?.to_vec();
            x.extend_from_slice(&g.spatial()[i]);
            let v = tape.constant(Tensor::vector(x));
            scores.push(self.mlp.apply(tape, &self.store, v)?);
        }
        tape.stack(&scores)
    }
}

/// Trains an expression-independent object scorer on `train` with the same
/// optimizer schedule as the model, then scores `eval`.
pub fn language_blind_baseline(
    cfg: &TrainConfig,
    train: &[Instance],
    eval: &[Instance],
) -> Result<BlindReport> {
    cfg.validate()?;
    let mut scorer = BlindScorer::new(cfg.model.feature_dim, cfg.model.mlp_hidden, cfg.seed)?;
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            scorer.store.zero_grad();
            let mut total = 0.0;
            for &i in chunk {
                let mut tape = Tape::new();
                let logits = scorer.logits(&mut tape, &train[i])?;
                let l = tape.cross_entropy(logits, train[i].target)?;
                total += tape.value(l).item();
                tape.backward(l, &mut scorer.store)?;
            }
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "blind baseline epoch {epoch} batch {b}: loss {total}"
                )));
            }
            scorer.store.scale_grad(1.0 / chunk.len() as f64);
            scorer.store.adam_step(&adam)?;
        }
    }
    let predictions = eval
        .iter()
        .map(|inst| {
            let mut tape = Tape::new();
            let logits = scorer.logits(&mut tape, inst)?;
            Ok(prediction(inst, argmax(tape.value(logits).data())))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_predictions(predictions);
    Ok(BlindReport {
        bias_alarms: report.bias_alarms(),
        report,
    })
}
