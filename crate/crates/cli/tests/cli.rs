use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overscale-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, counts: [usize; 5], n_max: usize) {
    let types: serde_json::Map<String, Value> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| ((k + 1).to_string(), serde_json::json!({ "count": c })))
        .collect();
    let spec = serde_json::json!({ "n_max": n_max, "seed": 1, "types": types });
    std::fs::write(dir.join("spec.json"), spec.to_string()).unwrap();
    ok(dir, &["synth", "--spec", "spec.json", "--out", "s"]);
}

#[test]
fn curves_have_one_row_per_budget() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, [2, 2, 2, 2, 2], 16);
    ok(d, &["curves", "--traces", "s/traces.json", "--tau", "200", "--out", "c"]);
    let csv = std::fs::read_to_string(d.join("c/curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 16);
    assert_eq!(json(d.join("c/curves.json"))["curves"][0]["estimator_meta"]["method"], "SUBSAMPLE");

    ok(d, &["curves", "--traces", "s/traces.json", "--exact", "--out", "e"]);
    let doc = json(d.join("e/curves.json"));
    assert_eq!(doc["curves"][0]["estimator_meta"]["method"], "EXACT");
    assert_eq!(doc["run_config"]["exact"], true);
}

#[test]
fn all_type1_dataset_has_unit_index() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, [6, 0, 0, 0, 0], 16);
    ok(d, &["analyze", "--traces", "s/traces.json", "--exact", "--out", "a"]);
    let doc = json(d.join("a/analysis.json"));
    assert_eq!(doc["index_summary"]["m_d"], 1.0);
    assert_eq!(doc["partition"]["p"], serde_json::json!([1.0, 0.0, 0.0, 0.0, 0.0]));
    assert_eq!(doc["theorem1"]["holds"], true);
    let gains = std::fs::read_to_string(d.join("a/type_gains.csv")).unwrap();
    assert_eq!(gains.lines().count(), 6);
}

#[test]
fn policies_report_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, [5, 5, 10, 20, 0], 64);
    ok(d, &["policies", "--traces", "s/traces.json", "--out", "p"]);
    let doc = json(d.join("p/summary.json"));
    let policies = doc["policies"].as_object().unwrap();
    assert_eq!(policies.len(), 5);
    for (name, row) in policies {
        for key in ["c_mem", "c_time", "accuracy"] {
            assert!(row[key].is_number(), "{name}.{key}");
        }
        let csv = std::fs::read_to_string(d.join(format!("p/outcomes_{name}.csv"))).unwrap();
        assert!(csv.starts_with("question_id,final_answer,credit,samples_used,rounds_used\n"));
        assert_eq!(csv.lines().count(), 41);
    }
    let oracle = &policies["oracle"];
    let std = &policies["std-pt"];
    assert!(oracle["accuracy"].as_f64() >= std["accuracy"].as_f64());
    assert_eq!(oracle["c_mem"], doc["m_d"]);

    ok(d, &["policies", "--traces", "s/traces.json", "--policy", "esc", "--window", "1", "--out", "w"]);
    let esc = json(d.join("w/summary.json"));
    assert_eq!(esc["policies"]["esc"]["mean_samples"], 1.0);
}

#[test]
fn train_estimate_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bench = r#"{"n_max": 32, "dim": 16, "latent": 4, "noise": [1.0, 0.3], "n_train": 120, "n_validation": 40, "n_test": 40, "max_wrong": 12, "seed": 3}"#;
    std::fs::write(d.join("bench.json"), bench).unwrap();
    ok(d, &["synth-features", "--spec", "bench.json", "--out", "f"]);
    ok(d, &["train", "--features", "f/features_train.json", "--epochs", "5", "--out", "t"]);
    let bundle = json(d.join("t/bundle.json"));
    assert_eq!(bundle["estimators"].as_array().unwrap().len(), 2);
    let total: f64 = bundle["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(bundle["run_config"]["epochs"], 5);

    ok(d, &["estimate", "--features", "f/features_test.json", "--bundle", "t/bundle.json", "--out", "e"]);
    assert!(json(d.join("e/estimates.json"))["normalized_mae"].is_number());
    ok(d, &["policies", "--traces", "f/traces_test.json", "--estimates", "e/estimates.csv", "--policy", "t2,std-pt", "--out", "p"]);
    let summary = json(d.join("p/summary.json"));
    assert_eq!(summary["policies"]["t2"]["mean_rounds"], 1.0);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, [2, 2, 2, 2, 2], 16);
    std::fs::write(d.join("cfg.json"), r#"{"traces": "s/traces.json", "tau": 50, "seed": 4}"#).unwrap();
    ok(d, &["curves", "--config", "cfg.json", "--seed", "9", "--out", "c"]);
    let rc = &json(d.join("c/curves.json"))["run_config"];
    assert_eq!(rc["tau"], 50);
    assert_eq!(rc["seed"], 9);
}

#[test]
fn exit_codes_and_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"format_version": 1, "n_max": 2, "traces": "nope"}"#).unwrap();
    let out = run(d, &["analyze", "--traces", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "schema");

    let out = run(d, &["curves", "--traces", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "runtime");

    std::fs::write(d.join("cfg.json"), r#"{"sead": 1}"#).unwrap();
    let out = run(d, &["curves", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
}
