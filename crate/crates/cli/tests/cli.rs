use std::path::Path;
use std::process::{Command, Output};

fn past(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_past")).args(args).output().expect("spawn past")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path, seed: &str) {
    let out = past(&["--seed", seed, "synth", "--out-dir", p(dir), "--nodes", "6", "--days", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(past(&[]).status.code(), Some(1));
    assert_eq!(past(&["bogus"]).status.code(), Some(1));
    assert_eq!(past(&["synth"]).status.code(), Some(1));
    assert_eq!(past(&["--help"]).status.code(), Some(0));
    assert_eq!(past(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn synth_with_same_seed_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth_small(&a, "7");
    synth_small(&b, "7");
    synth_small(&c, "8");
    for f in ["values.csv", "graph.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.join("values.csv")).unwrap(), std::fs::read(c.join("values.csv")).unwrap());
}

#[test]
fn train_impute_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_small(&data, "1");
    let (values, graph) = (data.join("values.csv"), data.join("graph.json"));
    let mask = dir.path().join("mask.csv");
    let ckpt = dir.path().join("model.ckpt");
    let imputed = dir.path().join("imputed.csv");

    let out = past(&["mask", "--values", p(&values), "--graph", p(&graph), "--kind", "fiber", "--rate", "0.3", "--max-len", "8", "--out", p(&mask)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = past(&[
        "train", "--values", p(&values), "--graph", p(&graph), "--mask", p(&mask), "--out", p(&ckpt),
        "--seq-len", "24", "--d", "8", "--layers", "1", "--k-order", "1", "--epochs", "2", "--lr", "0.01",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = past(&["impute", "--values", p(&values), "--graph", p(&graph), "--mask", p(&mask), "--checkpoint", p(&ckpt), "--out", p(&imputed)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = past(&["evaluate", "--pred", p(&imputed), "--truth", p(&values), "--mask", p(&mask)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (rmse, mae) = (report["rmse"].as_f64().unwrap(), report["mae"].as_f64().unwrap());
    assert!(rmse.is_finite() && rmse >= mae && mae > 0.0);
}

#[test]
fn impute_with_mismatched_mask_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small");
    let other = dir.path().join("other");
    synth_small(&small, "2");
    let out = past(&["--seed", "2", "synth", "--out-dir", p(&other), "--nodes", "4", "--days", "2"]);
    assert!(out.status.success());
    let mask = dir.path().join("mask.csv");
    let out = past(&["mask", "--values", p(&other.join("values.csv")), "--graph", p(&other.join("graph.json")), "--kind", "random", "--rate", "0.2", "--out", p(&mask)]);
    assert!(out.status.success());

    let values = small.join("values.csv");
    let graph = small.join("graph.json");
    let ckpt = dir.path().join("model.ckpt");
    let out = past(&["train", "--values", p(&values), "--graph", p(&graph), "--out", p(&ckpt), "--seq-len", "24", "--d", "4", "--layers", "1", "--epochs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = past(&["impute", "--values", p(&values), "--graph", p(&graph), "--mask", p(&mask), "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("y.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.starts_with("error:") && msg.contains("shape"), "{msg}");
}

#[test]
fn missing_input_file_exits_two() {
    let out = past(&["evaluate", "--pred", "/nonexistent/a.csv", "--truth", "/nonexistent/b.csv", "--mask", "/nonexistent/m.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_writes_results_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let results = dir.path().join("results");
    std::fs::write(
        &plan,
        r#"{
            "dataset": { "synthetic": { "n_nodes": 6, "n_days": 4 } },
            "scenarios": [ { "kind": "random", "r": 0.4 }, { "kind": "fiber", "r": 0.3, "l": 12 } ],
            "methods": ["linear", "knn"]
        }"#,
    )
    .unwrap();
    let out = past(&["experiment", "--config", p(&plan), "--out-dir", p(&results)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(results.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scenario,method,setting,rmse,mae,runtime_seconds"));
    assert_eq!(lines.count(), 2 * 2 * 2);
    assert!(results.join("results.json").exists());
}
