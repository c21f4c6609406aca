use std::sync::Arc;

use super::*;
use crate::langgraph::parse_expression;
use crate::refgen::{
    generate_dataset, prepare_scene, synth_scenes, DatasetConfig, QuotaCell, Split, World,
};
use crate::semgraph::{build_graph, BBox, ObjectRecord};

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 1,
        model: ModelConfig {
            embedding_dim: 6,
            lstm_hidden: 5,
            mlp_hidden: 7,
            feature_dim: 8,
            spatial_embed_dim: 3,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn fixture(scenes: usize, per_cell: usize, cfg: &TrainConfig) -> Vec<Instance> {
    let w = World::desk();
    let raw = synth_scenes(&w, scenes, 3, 6, 5).unwrap();
    let scenes: Vec<_> = raw.iter().map(|s| prepare_scene(s, &w)).collect();
    let dc = DatasetConfig {
        quotas: DatasetConfig::uniform_quotas(per_cell),
        ..DatasetConfig::default()
    };
    let d = generate_dataset(&scenes, &dc, &w).unwrap();
    let images = build_images(&scenes, &cfg.image_settings()).unwrap();
    build_instances(&d.samples, &scenes, &images, &w.grammar().unwrap()).unwrap()
}

#[test]
fn training_is_reproducible() {
    let cfg = small_config();
    let data: Vec<Instance> = fixture(10, 2, &cfg).into_iter().take(10).collect();
    let a = train(&cfg, &data, &[])
        .unwrap()
        .checkpoint
        .to_json()
        .unwrap();
    let b = train(&cfg, &data, &[])
        .unwrap()
        .checkpoint
        .to_json()
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_config()
    };
    let data: Vec<Instance> = fixture(10, 2, &cfg).into_iter().take(10).collect();
    let out = train(&cfg, &data, &[]).unwrap();
    let fresh = Sgmn::new(cfg.model.clone(), build_vocab(&data), cfg.seed).unwrap();
    assert_eq!(out.model.store().to_map(), fresh.store().to_map());
}

#[test]
fn loss_falls_on_a_small_set() {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 8,
        ..small_config()
    };
    let data: Vec<Instance> = fixture(12, 2, &cfg).into_iter().take(16).collect();
    let ck = train(&cfg, &data, &[]).unwrap().checkpoint;
    let first = ck.history.first().unwrap().mean_loss;
    let last = ck.history.last().unwrap().mean_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn early_stopping_keeps_best_epoch() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 10,
        patience: 2,
        ..small_config()
    };
    let data = fixture(10, 2, &cfg);
    let (tr, va): (Vec<_>, Vec<_>) = data.into_iter().partition(|i| i.split == Split::Train);
    let ck = train(&cfg, &tr, &va).unwrap().checkpoint;
    // a frozen model never improves after the first epoch
    assert_eq!(ck.best_epoch, 1);
    assert_eq!(ck.history.len(), 3);
}

fn nan_instance(grammar_text: &str) -> Instance {
    let w = World::desk();
    let objs = vec![
        ObjectRecord::new(0, BBox::new(0.1, 0.1, 0.2, 0.2))
            .with_class("cup")
            .with_feature(vec![f64::NAN; 8]),
        ObjectRecord::new(1, BBox::new(0.5, 0.5, 0.2, 0.2))
            .with_class("plate")
            .with_feature(vec![0.1; 8]),
    ];
    Instance {
        expression: grammar_text.into(),
        graph: parse_expression(grammar_text, &w.grammar().unwrap()).unwrap(),
        image: Arc::new(build_graph(objs, 5).unwrap()),
        target: 0,
        node_count: 1,
        split: Split::Train,
    }
}

#[test]
fn non_finite_loss_names_the_batch() {
    let cfg = small_config();
    let mut data: Vec<Instance> = fixture(10, 2, &cfg).into_iter().take(6).collect();
    data.push(nan_instance("the red cup"));
    let err = train(&cfg, &data, &[]).err().expect("must diverge");
    assert_eq!(err.class(), "diverged");
    let msg = err.to_string();
    assert!(msg.contains("epoch 1 batch"), "{msg}");
    assert!(msg.contains("the red cup"), "{msg}");
}

#[test]
fn threaded_evaluation_matches_serial() {
    let cfg = small_config();
    let data = fixture(15, 3, &cfg);
    let model = Sgmn::new(cfg.model.clone(), build_vocab(&data), 3).unwrap();
    let a = evaluate(&model, &data, 1).unwrap();
    let b = evaluate(&model, &data, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_and_vocabulary_mismatch() {
    let cfg = small_config();
    let data: Vec<Instance> = fixture(10, 2, &cfg).into_iter().take(8).collect();
    let out = train(&cfg, &data, &[]).unwrap();
    let text = out.checkpoint.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    let model = back.model().unwrap();
    assert_eq!(
        evaluate(&model, &data, 1).unwrap(),
        evaluate(&out.model, &data, 1).unwrap()
    );
    let mut bad = back.clone();
    bad.vocab = Vocab::from_tokens(["only"]);
    assert_eq!(bad.model().err().unwrap().class(), "vocabulary");
    assert_eq!(
        Checkpoint::from_json("{\"nope\": 1}")
            .err()
            .unwrap()
            .class(),
        "schema"
    );
}

/// Untrained models pick the referent at chance: the number of hits is a sum
/// of independent Bernoulli(1/N) draws, so it must lie within three standard
/// deviations of its mean.
#[test]
fn random_model_scores_at_chance() {
    let cfg = small_config();
    let w = World::desk();
    let raw = synth_scenes(&w, 400, 3, 7, 9).unwrap();
    let scenes: Vec<_> = raw.iter().map(|s| prepare_scene(s, &w)).collect();
    let dc = DatasetConfig {
        quotas: vec![
            QuotaCell {
                difficulty: 1,
                nodes: 1,
                count: 600,
            },
            QuotaCell {
                difficulty: 1,
                nodes: 2,
                count: 600,
            },
        ],
        ..DatasetConfig::default()
    };
    let d = generate_dataset(&scenes, &dc, &w).unwrap();
    let images = build_images(&scenes, &cfg.image_settings()).unwrap();
    let data = build_instances(&d.samples, &scenes, &images, &w.grammar().unwrap()).unwrap();
    assert!(data.len() >= 1000);
    let model = Sgmn::new(cfg.model.clone(), build_vocab(&data), 17).unwrap();
    let r = evaluate(&model, &data, 1).unwrap();
    let mean: f64 = data.iter().map(|i| 1.0 / i.num_objects() as f64).sum();
    let var: f64 = data
        .iter()
        .map(|i| {
            let p = 1.0 / i.num_objects() as f64;
            p * (1.0 - p)
        })
        .sum();
    let hits = r.correct as f64;
    assert!(
        (hits - mean).abs() <= 3.0 * var.sqrt(),
        "{hits} hits, expected {mean} ± {}",
        3.0 * var.sqrt()
    );
}

#[test]
fn blind_baseline_is_exact_on_single_object_scenes() {
    let cfg = small_config();
    let w = World::desk();
    let g = w.grammar().unwrap();
    let data: Vec<Instance> = ["the cup", "the red plate", "this lamp"]
        .iter()
        .map(|text| {
            let objs = vec![ObjectRecord::new(0, BBox::new(0.2, 0.2, 0.3, 0.3))
                .with_class("cup")
                .with_feature(vec![0.5; 8])];
            Instance {
                expression: text.to_string(),
                graph: parse_expression(text, &g).unwrap(),
                image: Arc::new(build_graph(objs, 5).unwrap()),
                target: 0,
                node_count: 1,
                split: Split::Test,
            }
        })
        .collect();
    let b = language_blind_baseline(&cfg, &data, &data).unwrap();
    assert_eq!(b.report.accuracy, 1.0);
    // chance is 1 here, so the alarm threshold is out of reach
    assert!(b.bias_alarms.is_empty());
}

#[test]
fn ablation_variants_differ_only_in_flags() {
    let base = ModelConfig {
        logit_scale: 4.0,
        ..ModelConfig::default()
    };
    let full = Variant::Full.apply(&base);
    for v in Variant::ALL {
        let c = v.apply(&base);
        assert_eq!(c.logit_scale, 4.0);
        assert_eq!(c.feature_dim, full.feature_dim);
        let changed = (c.merge != full.merge) as u8
            + (c.enable_norm != full.enable_norm) as u8
            + (c.enable_transfer != full.enable_transfer) as u8;
        assert_eq!(changed, (v != Variant::Full) as u8, "{v:?}");
    }
}

#[test]
fn ablation_table_has_one_row_per_variant() {
    let cfg = small_config();
    let data = fixture(10, 2, &cfg);
    let vs = [Variant::Full, Variant::NoTransfer];
    let t = run_ablations(&cfg, &vs, &data, &[], &data, 1).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert!(t.get(Variant::NoTransfer).is_some());
    assert!(t.render().contains("w/o transfer"));
}
