use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sgmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgmn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = sgmn(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Class from the final `error: <class>: ...` line.
fn error_class(o: &Output) -> String {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    let last = err.lines().last().unwrap_or_default();
    let rest = last.strip_prefix("error: ").expect(last);
    rest.split(':').next().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_QUOTAS: &str = r#"quotas=[{"difficulty":1,"nodes":1,"count":12},{"difficulty":1,"nodes":2,"count":8},{"difficulty":2,"nodes":2,"count":8}]"#;

const SMALL_MODEL: [&str; 12] = [
    "--set",
    "model.embedding_dim=6",
    "--set",
    "model.lstm_hidden=5",
    "--set",
    "model.mlp_hidden=7",
    "--set",
    "model.feature_dim=8",
    "--set",
    "epochs=2",
    "--set",
    "batch_size=8",
];

fn generate(dir: &Path, seed: &str) {
    ok(&[
        "generate",
        "--seed",
        seed,
        "--synth",
        "25",
        "--out",
        p(dir),
        "--set",
        SMALL_QUOTAS,
    ]);
}

#[test]
fn parse_prints_interchange_json() {
    let out = ok(&["parse", "the red cup"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(v["nodes"][0]["phrase"], "red cup");
    assert_eq!(v["edges"].as_array().unwrap().len(), 0);
}

#[test]
fn parse_failure_is_one_classed_line() {
    let o = sgmn(&["parse", "the red"]);
    assert_eq!(error_class(&o), "parse");
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn ground_single_object() {
    let dir = TempDir::new().unwrap();
    let objects = dir.path().join("objects.json");
    std::fs::write(
        &objects,
        r#"{"image_id":"one","width":100,"height":80,"objects":[{"id":7,"box":[10,10,30,20],"class":"cup","attributes":["red"]}]}"#,
    )
    .unwrap();
    let trace = dir.path().join("trace.json");
    let dot = dir.path().join("trace.dot");
    let out = ok(&[
        "ground",
        "--objects",
        p(&objects),
        "--expression",
        "the red cup",
        "--trace",
        p(&trace),
        "--dot",
        p(&dot),
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["prediction"], 7);
    assert_eq!(v["p"], serde_json::json!([1.0]));
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(t["p"], serde_json::json!([1.0]));
    assert!(std::fs::read_to_string(&dot).unwrap().contains("obj 7"));
}

#[test]
fn generate_is_deterministic_and_needs_a_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    generate(a.path(), "4");
    generate(b.path(), "4");
    for f in ["scenes.jsonl", "dataset.jsonl", "report.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // atomic writes leave no temporaries behind
    let names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().all(|n| !n.ends_with(".tmp")), "{names:?}");
    let o = sgmn(&["generate", "--out", p(a.path())]);
    assert_eq!(error_class(&o), "usage");
}

#[test]
fn shortfall_is_reported_and_fatal_only_when_strict() {
    let dir = TempDir::new().unwrap();
    let q = r#"quotas=[{"difficulty":5,"nodes":5,"count":100000}]"#;
    let args = [
        "generate",
        "--seed",
        "1",
        "--synth",
        "4",
        "--out",
        p(dir.path()),
        "--set",
        q,
    ];
    let o = sgmn(&args);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("shortfall: d=5 C=5"));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(error_class(&sgmn(&strict)), "shortfall");
}

#[test]
fn unknown_override_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let o = sgmn(&[
        "generate",
        "--seed",
        "1",
        "--out",
        p(dir.path()),
        "--set",
        "colour=blue",
    ]);
    assert_eq!(error_class(&o), "usage");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = sgmn(&[
        "train",
        "--seed",
        "1",
        "--scenes",
        p(&missing),
        "--dataset",
        p(&missing),
        "--out",
        p(&dir.path().join("ck.json")),
    ]);
    assert_eq!(error_class(&o), "io");
}

#[test]
fn train_eval_ablate_round_trip() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "2");
    let scenes = dir.path().join("scenes.jsonl");
    let dataset = dir.path().join("dataset.jsonl");
    let train = |out: &Path| {
        let mut args = vec![
            "train",
            "--seed",
            "3",
            "--scenes",
            p(&scenes),
            "--dataset",
            p(&dataset),
            "--out",
            p(out),
        ];
        args.extend(SMALL_MODEL);
        ok(&args);
    };
    let ck1 = dir.path().join("ck1.json");
    let ck2 = dir.path().join("ck2.json");
    train(&ck1);
    train(&ck2);
    assert_eq!(std::fs::read(&ck1).unwrap(), std::fs::read(&ck2).unwrap());

    let report = dir.path().join("report.json");
    let table = dir.path().join("report.txt");
    let out = ok(&[
        "eval",
        "--checkpoint",
        p(&ck1),
        "--scenes",
        p(&scenes),
        "--dataset",
        p(&dataset),
        "--split",
        "train",
        "--blind",
        "--threads",
        "2",
        "--out",
        p(&report),
        "--table",
        p(&table),
    ]);
    assert_eq!(out, std::fs::read_to_string(&table).unwrap());
    assert!(out.contains("language-blind"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let acc = v["model"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(v["blind"]["report"]["total"].as_u64().unwrap() > 0);

    let o = sgmn(&[
        "eval",
        "--checkpoint",
        p(&ck1),
        "--scenes",
        p(&scenes),
        "--dataset",
        p(&dataset),
        "--split",
        "dev",
    ]);
    assert_eq!(error_class(&o), "usage");

    let mut args = vec![
        "ablate",
        "--seed",
        "3",
        "--scenes",
        p(&scenes),
        "--dataset",
        p(&dataset),
        "--variants",
        "full,no_transfer",
    ];
    args.extend(SMALL_MODEL);
    let out = ok(&args);
    assert!(out.contains("w/o transfer"));
}
