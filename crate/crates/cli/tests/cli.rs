use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn probecard(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probecard"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PROBECARD_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = probecard(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Dataset and workload shared by most tests.
fn fixture(n: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    ok(&["synth", "d.fvecs", "--n", n, "--dim", "8", "--seed", "3"], &root);
    ok(&["workload", "d.fvecs", "w.jsonl", "--n-queries", "4", "--n-cards", "6", "--seed", "1"], &root);
    (dir, root)
}

#[test]
fn exhaustive_flags_reproduce_truth() {
    let (_dir, root) = fixture("1000");
    ok(&["build", "d.fvecs", "b", "--k-funcs", "8", "--dmax", "8"], &root);
    ok(
        &[
            "estimate", "b", "w.jsonl", "--max-visit", "1.0", "--s-init", "1.0", "--s-max", "1.0", "--out", "r.jsonl",
        ],
        &root,
    );
    let truth = jsonl(&root.join("w.jsonl"));
    let results = jsonl(&root.join("r.jsonl"));
    assert_eq!(truth.len(), 24);
    for (t, r) in truth.iter().zip(&results) {
        assert_eq!(t["query_id"], r["query_id"]);
        assert_eq!(t["true_cardinality"].as_f64(), r["estimate"]["cardinality"].as_f64());
    }
    let out = ok(&["eval", "r.jsonl", "w.jsonl", "--json", "rep.json"], &root);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("estimator"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(root.join("rep.json")).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["max"].as_f64(), Some(1.0));
    assert_eq!(report["manifest"]["command"], "eval");
}

#[test]
fn builds_are_byte_identical() {
    let (_dir, root) = fixture("800");
    for out in ["b1", "b2"] {
        ok(&["build", "d.fvecs", out, "--pq", "--pq-k", "16", "--pq-iters", "4", "--seed", "9"], &root);
    }
    for name in ["manifest.json", "data.fvecs", "lsh.bin", "neighbors.bin", "pq.bin"] {
        assert_eq!(
            std::fs::read(root.join("b1").join(name)).unwrap(),
            std::fs::read(root.join("b2").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn workloads_are_deterministic() {
    let (_dir, root) = fixture("500");
    ok(&["workload", "d.fvecs", "again.jsonl", "--n-queries", "4", "--n-cards", "6", "--seed", "1"], &root);
    assert_eq!(
        std::fs::read(root.join("w.jsonl")).unwrap(),
        std::fs::read(root.join("again.jsonl")).unwrap()
    );
    ok(&["workload", "d.fvecs", "one.jsonl", "--n-queries", "3", "--n-cards", "1"], &root);
    assert_eq!(jsonl(&root.join("one.jsonl")).len(), 3);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("one.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "workload");
    assert!(manifest["dataset_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let (_dir, root) = fixture("2000");
    ok(&["build", "d.fvecs", "b"], &root);
    ok(&["--threads", "1", "estimate", "b", "w.jsonl", "--seed", "4", "--out", "r1.jsonl"], &root);
    ok(&["--threads", "3", "estimate", "b", "w.jsonl", "--seed", "4", "--out", "r3.jsonl"], &root);
    let strip = |v: Vec<Value>| v.into_iter().map(|r| (r["query_id"].clone(), r["estimate"].clone())).collect::<Vec<_>>();
    assert_eq!(strip(jsonl(&root.join("r1.jsonl"))), strip(jsonl(&root.join("r3.jsonl"))));
}

#[test]
fn adc_mode_needs_pq() {
    let (_dir, root) = fixture("600");
    ok(&["build", "d.fvecs", "plain", "--no-pq"], &root);
    let out = probecard(&["estimate", "plain", "w.jsonl", "--mode", "adc"], &root);
    assert_eq!(out.status.code(), Some(2));
    ok(&["build", "d.fvecs", "quant", "--pq", "--pq-k", "16", "--pq-iters", "4"], &root);
    let out = ok(&["estimate", "quant", "w.jsonl", "--mode", "adc"], &root);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 24);
}

#[test]
fn exit_codes() {
    let (_dir, root) = fixture("300");
    ok(&["build", "d.fvecs", "b"], &root);
    assert_eq!(probecard(&["estimate", "b", "missing.jsonl"], &root).status.code(), Some(2));
    assert_eq!(probecard(&["estimate", "b"], &root).status.code(), Some(1));
    assert_eq!(probecard(&["estimate", "b", "w.jsonl", "--epsilon", "-1"], &root).status.code(), Some(1));
    assert_eq!(probecard(&["frobnicate"], &root).status.code(), Some(1));
    assert_eq!(probecard(&["--help"], &root).status.code(), Some(0));
    assert_eq!(probecard(&["build", "nothing.fvecs", "x"], &root).status.code(), Some(2));

    std::fs::write(root.join("bad.jsonl"), "{\"query_id\": 0}\n").unwrap();
    let out = probecard(&["estimate", "b", "bad.jsonl"], &root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));

    ok(&["estimate", "b", "w.jsonl", "--out", "r.jsonl"], &root);
    ok(&["workload", "d.fvecs", "other.jsonl", "--n-queries", "2", "--n-cards", "2"], &root);
    assert_eq!(probecard(&["eval", "r.jsonl", "other.jsonl"], &root).status.code(), Some(2));
    assert_eq!(
        probecard(&["eval", "r.jsonl", "w.jsonl", "--baseline", "oracle"], &root).status.code(),
        Some(1)
    );
}

#[test]
fn update_follows_a_full_build() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["synth", "all.fvecs", "--n", "3000", "--dim", "8", "--seed", "5"], root);
    // Split the file into a 10% head and a 90% tail at record boundaries.
    let bytes = std::fs::read(root.join("all.fvecs")).unwrap();
    let record = 4 + 8 * 4;
    std::fs::write(root.join("head.fvecs"), &bytes[..300 * record]).unwrap();
    std::fs::write(root.join("tail.fvecs"), &bytes[300 * record..]).unwrap();
    std::fs::write(root.join("empty.fvecs"), []).unwrap();

    ok(&["build", "all.fvecs", "full", "--seed", "2"], root);
    ok(&["build", "head.fvecs", "inc", "--seed", "2"], root);
    ok(&["update", "inc", "tail.fvecs"], root);
    for name in ["data.fvecs", "lsh.bin", "neighbors.bin"] {
        assert_eq!(
            std::fs::read(root.join("full").join(name)).unwrap(),
            std::fs::read(root.join("inc").join(name)).unwrap(),
            "{name}"
        );
    }

    let before: Value = serde_json::from_str(&std::fs::read_to_string(root.join("inc/manifest.json")).unwrap()).unwrap();
    ok(&["update", "inc", "empty.fvecs"], root);
    let after: Value = serde_json::from_str(&std::fs::read_to_string(root.join("inc/manifest.json")).unwrap()).unwrap();
    assert_eq!(before["components"], after["components"]);
    assert_eq!(after["lineage"].as_array().unwrap().len(), 3);

    ok(&["synth", "wide.fvecs", "--n", "10", "--dim", "4"], root);
    assert_eq!(probecard(&["update", "inc", "wide.fvecs"], root).status.code(), Some(2));
}

#[test]
fn baselines_in_eval() {
    let (_dir, root) = fixture("1500");
    ok(&["build", "d.fvecs", "b"], &root);
    ok(&["estimate", "b", "w.jsonl", "--out", "r.jsonl"], &root);
    let out = ok(
        &[
            "eval", "r.jsonl", "w.jsonl", "--baseline", "sample:1.0", "--baseline", "sample:0.01", "--data", "b",
            "--csv", "rows.csv", "--json", "rep.json",
        ],
        &root,
    );
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(root.join("rep.json")).unwrap()).unwrap();
    let exact = &report["reports"][1];
    assert_eq!(exact["label"], "sample:1.0");
    assert_eq!(exact["mean"].as_f64(), Some(1.0));
    assert_eq!(exact["max"].as_f64(), Some(1.0));
    assert_eq!(std::fs::read_to_string(root.join("rows.csv")).unwrap().lines().count(), 25);
    assert_eq!(
        probecard(&["eval", "r.jsonl", "w.jsonl", "--baseline", "sample:0.5"], &root).status.code(),
        Some(1)
    );
}
