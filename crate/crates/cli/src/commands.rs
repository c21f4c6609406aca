use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use sgmn::harness::{
    build_images, build_instances, evaluate, language_blind_baseline, render_table, run_ablations,
    split_of, train as train_model, Checkpoint, Instance, TrainConfig, Variant,
};
use sgmn::langgraph::{graph_to_json, load_graph, parse_expression, LanguageSceneGraph};
use sgmn::model::{predict, Sgmn, Vocab};
use sgmn::numkernel::write_atomic;
use sgmn::refgen::{
    generate_dataset, load_dataset, load_scenes, prepare_scene, save_scenes, synth_scenes,
    DatasetConfig, Split, World,
};
use sgmn::semgraph::{build_graph, synth_features, ObjectsFile};

use crate::overrides;

#[derive(Debug)]
pub enum CliError {
    Core(sgmn::Error),
    Usage(String),
    Shortfall(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Usage(_) => "usage",
            CliError::Shortfall(_) => "shortfall",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) | CliError::Shortfall(m) => f.write_str(m),
        }
    }
}

impl From<sgmn::Error> for CliError {
    fn from(e: sgmn::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Global {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub strict: bool,
    pub threads: usize,
    pub sets: Vec<String>,
}

impl Global {
    /// Config from `--config` (or defaults) with every `--set` applied.
    fn config<T: Default + Serialize + DeserializeOwned>(&self) -> Result<T> {
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| sgmn::Error::Load(format!("config {}: {e}", p.display())))?
            }
            None => T::default(),
        };
        overrides::apply(&base, &self.sets)
    }

    fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Usage(format!("{command} requires --seed")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

pub struct GenerateInput {
    pub scenes: Option<PathBuf>,
    pub synth: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub out: PathBuf,
}

pub fn generate(g: &Global, a: &GenerateInput) -> Result<()> {
    let mut cfg: DatasetConfig = g.config()?;
    cfg.seed = g.require_seed("generate")?;
    let world = World::desk();
    let raw = match &a.scenes {
        Some(p) => load_scenes(p)?,
        None => synth_scenes(&world, a.synth, a.min_objects, a.max_objects, cfg.seed)?,
    };
    let scenes: Vec<_> = raw.iter().map(|s| prepare_scene(s, &world)).collect();
    let data = generate_dataset(&scenes, &cfg, &world)?;

    std::fs::create_dir_all(&a.out)?;
    save_scenes(&scenes, &a.out.join("scenes.jsonl"))?;
    data.save(&a.out.join("dataset.jsonl"))?;
    let mut cells = std::collections::BTreeMap::<String, usize>::new();
    let mut splits = std::collections::BTreeMap::<String, usize>::new();
    for s in &data.samples {
        *cells
            .entry(format!("d{}_c{}", s.difficulty, s.node_count))
            .or_default() += 1;
        let name = serde_json::to_value(s.split).expect("split serializes");
        *splits
            .entry(name.as_str().unwrap_or("?").to_string())
            .or_default() += 1;
    }
    let report = json!({
        "scenes": scenes.len(),
        "samples": data.samples.len(),
        "pool_size": data.pool_size,
        "cells": cells,
        "splits": splits,
        "shortfall": data.shortfall,
        "config": cfg,
    });
    write_text(&a.out.join("report.json"), &pretty(&report))?;
    println!(
        "generated {} samples over {} scenes into {}",
        data.samples.len(),
        scenes.len(),
        a.out.display()
    );
    for s in &data.shortfall {
        eprintln!(
            "shortfall: d={} C={} produced {} of {}",
            s.difficulty, s.nodes, s.produced, s.requested
        );
    }
    if g.strict && !data.shortfall.is_empty() {
        return Err(CliError::Shortfall(format!(
            "{} quota cell(s) not met",
            data.shortfall.len()
        )));
    }
    Ok(())
}

pub fn parse(text: &str, out: Option<&Path>) -> Result<()> {
    let g = parse_expression(text, &World::desk().grammar()?)?;
    let mut s = graph_to_json(&g);
    s.push('\n');
    match out {
        Some(p) => write_text(p, &s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

pub struct GroundInput {
    pub objects: PathBuf,
    pub expression: Option<String>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub dot: Option<PathBuf>,
}

fn graph_words(gl: &LanguageSceneGraph) -> Vec<String> {
    gl.nodes()
        .iter()
        .flat_map(|n| n.words.iter())
        .chain(gl.edges().iter().flat_map(|e| e.relation.iter()))
        .cloned()
        .collect()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::from_json(&std::fs::read_to_string(path)?)?)
}

pub fn ground(g: &Global, a: &GroundInput) -> Result<()> {
    let gl = match (&a.expression, &a.graph) {
        (Some(text), _) => parse_expression(text, &World::desk().grammar()?)?,
        (None, Some(p)) => load_graph(p)?,
        (None, None) => return Err(CliError::Usage("need --expression or --graph".into())),
    };
    let (model, cfg) = match &a.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            (ck.model()?, ck.train)
        }
        None => {
            let mut cfg: TrainConfig = g.config()?;
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            let vocab = Vocab::from_tokens(graph_words(&gl));
            (Sgmn::new(cfg.model.clone(), vocab, cfg.seed)?, cfg)
        }
    };
    let mut records = ObjectsFile::load(&a.objects)?.records()?;
    if records.iter().any(|r| r.feature.is_none()) {
        synth_features(
            &mut records,
            cfg.model.feature_dim,
            cfg.feature_noise,
            cfg.seed,
        )?;
    }
    let go = build_graph(records, cfg.k)?;
    let trace = model.forward(&gl, &go)?;
    let index = predict(&trace);
    if let Some(p) = &a.trace {
        write_text(p, &(trace.to_json() + "\n"))?;
    }
    if let Some(p) = &a.dot {
        write_text(p, &trace.to_dot(&gl, &go)?)?;
    }
    let out = json!({
        "prediction": go.objects()[index].id,
        "index": index,
        "p": trace.p,
    });
    println!("{out}");
    Ok(())
}

/// Parsed instances of a scenes file and a dataset file, with features
/// synthesized as `cfg` prescribes.
fn load_data(
    cfg: &TrainConfig,
    scenes: Option<PathBuf>,
    dataset: Option<PathBuf>,
) -> Result<Vec<Instance>> {
    let scenes = scenes
        .or_else(|| cfg.scenes.clone())
        .ok_or_else(|| CliError::Usage("need --scenes".into()))?;
    let dataset = dataset
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| CliError::Usage("need --dataset".into()))?;
    let scenes = load_scenes(&scenes)?;
    let samples = load_dataset(&dataset)?;
    let images = build_images(&scenes, &cfg.image_settings())?;
    Ok(build_instances(
        &samples,
        &scenes,
        &images,
        &World::desk().grammar()?,
    )?)
}

pub fn train(
    g: &Global,
    scenes: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let mut cfg: TrainConfig = g.config()?;
    cfg.seed = g.require_seed("train")?;
    let data = load_data(&cfg, scenes, dataset)?;
    let tr = split_of(&data, Split::Train);
    let va = split_of(&data, Split::Val);
    let outcome = train_model(&cfg, &tr, &va)?;
    let ck = &outcome.checkpoint;
    write_text(out, &ck.to_json()?)?;
    let val = ck
        .history
        .get(ck.best_epoch - 1)
        .and_then(|h| h.val_accuracy)
        .map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "trained on {} samples for {} epoch(s); kept epoch {} (val {val})",
        tr.len(),
        ck.history.len(),
        ck.best_epoch
    );
    Ok(())
}

fn parse_split(name: &str) -> Result<Split> {
    serde_json::from_value(Value::String(name.into()))
        .map_err(|_| CliError::Usage(format!("unknown split {name:?} (train, val, test)")))
}

pub struct EvalInput {
    pub scenes: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub split: String,
    pub blind: bool,
    pub out: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

pub fn eval(g: &Global, a: &EvalInput) -> Result<()> {
    let split = parse_split(&a.split)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&ck.train, a.scenes.clone(), a.dataset.clone())?;
    let eval_set = split_of(&data, split);
    let model = ck.model()?;
    let report = evaluate(&model, &eval_set, g.threads)?;
    let blind = if a.blind {
        let b = language_blind_baseline(&ck.train, &split_of(&data, Split::Train), &eval_set)?;
        for alarm in &b.bias_alarms {
            eprintln!("bias alarm: {alarm}");
        }
        Some(b)
    } else {
        None
    };
    let mut rows = vec![("sgmn".to_string(), &report)];
    if let Some(b) = &blind {
        rows.push(("language-blind".to_string(), &b.report));
    }
    let table = render_table(&rows);
    if let Some(p) = &a.out {
        write_text(p, &pretty(&json!({ "model": report, "blind": blind })))?;
    }
    if let Some(p) = &a.table {
        write_text(p, &table)?;
    }
    print!("{table}");
    Ok(())
}

pub fn ablate(
    g: &Global,
    scenes: Option<PathBuf>,
    dataset: Option<PathBuf>,
    variants: &[String],
    out: Option<&Path>,
    table: Option<&Path>,
) -> Result<()> {
    let mut cfg: TrainConfig = g.config()?;
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    let variants: Vec<Variant> = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants
            .iter()
            .map(|v| {
                serde_json::from_value(Value::String(v.clone()))
                    .map_err(|_| CliError::Usage(format!("unknown variant {v:?}")))
            })
            .collect::<Result<_>>()?
    };
    let data = load_data(&cfg, scenes, dataset)?;
    let t = run_ablations(
        &cfg,
        &variants,
        &split_of(&data, Split::Train),
        &split_of(&data, Split::Val),
        &split_of(&data, Split::Test),
        g.threads,
    )?;
    let text = t.render();
    if let Some(p) = out {
        write_text(p, &pretty(&t))?;
    }
    if let Some(p) = table {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}
