use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fibrelab_core::{
    build_compatible, EdgeLabel, FibredNetwork, FibringArchitecture, FibringRule, NetworkInstance,
    RMatrix, RVector,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fibrelab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

/// Single node, one affine layer, no fibring edges.
fn passthrough_net() -> FibredNetwork {
    let inst =
        NetworkInstance::affine(RMatrix::identity(1), RVector::zeros(1)).expect("affine instance");
    FibredNetwork {
        architecture: FibringArchitecture::single("r", inst.architecture.clone()),
        root_instance: inst,
        rules: BTreeMap::new(),
    }
}

/// Two inputs summed into a scalar; used to exercise the cube guard.
fn two_input_net() -> FibredNetwork {
    let inst = NetworkInstance::affine(RMatrix::from_ints(&[&[1, 1]]), RVector::zeros(1))
        .expect("affine instance");
    FibredNetwork {
        architecture: FibringArchitecture::single("r", inst.architecture.clone()),
        root_instance: inst,
        rules: BTreeMap::new(),
    }
}

/// Negating self-fibred child: a known case where the extracted formula
/// disagrees with the classifier.
fn negating_child_net() -> FibredNetwork {
    let root = NetworkInstance::affine(RMatrix::identity(1), RVector::zeros(1)).unwrap();
    let child =
        NetworkInstance::affine(RMatrix::from_ints(&[&[-1]]), RVector::from_ints(&[1])).unwrap();
    let mut architecture = FibringArchitecture::single("r", root.architecture.clone());
    architecture.add_node(
        "r",
        "c",
        child.architecture.clone(),
        EdgeLabel {
            layer: 1,
            positions: vec![0],
        },
    );
    let mut rules: BTreeMap<String, BTreeMap<String, FibringRule>> = BTreeMap::new();
    rules
        .entry("r".into())
        .or_default()
        .insert("c".into(), FibringRule::SelfFibre(child));
    FibredNetwork {
        root_instance: root,
        architecture,
        rules,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

#[test]
fn eval_prints_output_and_classification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.json");
    write_json(
        &cfg,
        &serde_json::json!({ "net": passthrough_net(), "x": ["1"] }),
    );
    let out = run(&["eval", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    assert_eq!(doc["output"], serde_json::json!(["1"]));
    assert_eq!(doc["classification"], serde_json::json!(true));
}

#[test]
fn compile_writes_artifacts_to_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("compile.json");
    write_json(
        &cfg,
        &serde_json::json!({
            "mode": "gnn",
            "source": {"gnn": {"dims": [1, 1], "A": [[["1"]]], "B": [[["1"]]], "b": [["0"]]}},
            "graph": {"nodes": ["a", "b"], "edges": [["a", "b"]],
                      "features": {"a": ["1"], "b": ["0"]}},
            "vertex": "a",
        }),
    );
    let out_dir = dir.path().join("artifacts");
    let out = run(&[
        "compile",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--emit-dot",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let compiled = fs::read_to_string(out_dir.join("compiled.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&compiled).unwrap();
    assert_eq!(doc["mode"], serde_json::json!("gnn"));
    let dot = fs::read_to_string(out_dir.join("architecture.dot")).unwrap();
    assert!(dot.starts_with("digraph"), "{dot}");
}

#[test]
fn build_compatible_passes_and_reports_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("build.json");
    write_json(
        &cfg,
        &serde_json::json!({ "net": passthrough_net(), "x": ["1"] }),
    );
    let out = run(&["build-compatible", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    let entries = doc["report"]["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    assert!(entries.iter().all(|e| e["pass"] == serde_json::json!(true)));
}

#[test]
fn model_check_exit_code_tracks_the_verdict() {
    let net = passthrough_net();
    let x = RVector::from_ints(&[1]);
    let model = build_compatible(&net, &x).unwrap();
    let world = model.root_world(&x).unwrap().clone();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("check.json");
    let mut doc = serde_json::json!({
        "model": model.model,
        "at": "r,in",
        "world": world,
        "formula": "p1",
    });
    write_json(&cfg, &doc);
    let out = run(&["model-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["satisfied"], serde_json::json!(true));

    doc["formula"] = serde_json::json!("~p1");
    write_json(&cfg, &doc);
    let out = run(&["model-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["satisfied"], serde_json::json!(false));
}

#[test]
fn verify_stdout_is_byte_stable_for_a_seed() {
    let a = run(&["verify", "thm2", "--seed", "5", "--cases", "2"]);
    let b = run(&["verify", "thm2", "--seed", "5", "--cases", "2"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let docs = stdout_json(&a);
    assert_eq!(docs.as_array().unwrap().len(), 3, "one report per mode");
}

#[test]
fn verify_writes_reports_and_replays_repros() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("reports");
    let out = run(&[
        "verify",
        "thm1",
        "--seed",
        "1",
        "--cases",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "seed 1 finds mismatches");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("thm1.json")).unwrap()).unwrap();
    let repro = &report["failures"][0]["repro"];
    assert_eq!(repro["claim"], serde_json::json!("thm1"));
    let repro_path = dir.path().join("repro.json");
    write_json(&repro_path, repro);
    let replayed = run(&[
        "verify",
        "thm1",
        "--repro",
        repro_path.to_str().unwrap(),
    ]);
    assert_eq!(replayed.status.code(), Some(1), "repro still fails");

    let mismatch = run(&["verify", "thm2", "--repro", repro_path.to_str().unwrap()]);
    assert_eq!(mismatch.status.code(), Some(2), "claim mismatch is a usage error");
}

#[test]
fn known_disagreeing_network_fails_verification_when_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let repro_path = dir.path().join("repro.json");
    write_json(
        &repro_path,
        &serde_json::json!({
            "claim": "thm1",
            "net": negating_child_net(),
            "x": ["1"],
        }),
    );
    let out = run(&["verify", "thm1", "--repro", repro_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let doc = stdout_json(&out);
    assert_eq!(doc["failures"][0]["expected"], serde_json::json!("classification false"));
}

#[test]
fn cube_guard_env_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("build.json");
    write_json(
        &cfg,
        &serde_json::json!({ "net": two_input_net(), "x": ["1", "0"] }),
    );
    let blocked = bin()
        .args(["build-compatible", "--config", cfg.to_str().unwrap()])
        .env("FIBRELAB_MAX_CUBE", "1")
        .output()
        .unwrap();
    assert_eq!(blocked.status.code(), Some(2), "guard below n must error");
    let overridden = bin()
        .args([
            "build-compatible",
            "--config",
            cfg.to_str().unwrap(),
            "--max-cube",
            "4",
        ])
        .env("FIBRELAB_MAX_CUBE", "1")
        .output()
        .unwrap();
    assert_eq!(overridden.status.code(), Some(0), "flag outranks the variable");
}

#[test]
fn bad_inputs_exit_with_usage_code() {
    let missing = run(&["verify", "thm2", "--config", "/nonexistent.json"]);
    assert_eq!(missing.status.code(), Some(2));
    let unknown = run(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
}
