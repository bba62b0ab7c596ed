//! CLI surface tests: exit codes, error JSON, overrides, benchmark import.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::Output;

fn fixture(path: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(path)
        .display()
        .to_string()
}

fn stannis(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_stannis"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

#[test]
fn unknown_subcommand_exits_64() {
    let out = stannis(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
    let err = stderr_json(&out);
    assert_eq!(err["code"], 64);
}

#[test]
fn missing_input_exits_66() {
    let out = stannis(&[
        "tune",
        "--cluster",
        "/nonexistent/cluster.json",
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--output",
        "/tmp/never-written.json",
    ]);
    assert_eq!(out.status.code(), Some(66));
    let err = stderr_json(&out);
    assert_eq!(err["code"], 66);
    assert_eq!(err["location"], "/nonexistent/cluster.json");
}

#[test]
fn unknown_override_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("tune.json");
    let out = stannis(&[
        "tune",
        "--cluster",
        &fixture("cluster_24csd.json"),
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--output",
        out_path.to_str().unwrap(),
        "--override",
        "tuner.bogus=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["code"], 2);
    assert!(err["message"].as_str().unwrap().contains("tuner.bogus"));
    assert!(!out_path.exists(), "no artifact on validation failure");
}

#[test]
fn overrides_change_the_result_and_land_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("tune.json");
    let out = stannis(&[
        "tune",
        "--cluster",
        &fixture("cluster_24csd.json"),
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--output",
        out_path.to_str().unwrap(),
        "--override",
        "tuner.e=2",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["manifest"]["overrides"]["tuner.e"], "2");
    assert_eq!(v["manifest"]["effective"]["tuner"]["e"], 2.0);
    // A 50% band stops the host batch growth far earlier than the default 20%.
    let host = v["result"]["per_node"]["host"]["batch"].as_u64().unwrap();
    assert!(host < 202, "host batch {host} with E=2");
}

#[test]
fn bench_import_normalizes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("records.json");
    let out = stannis(&[
        "bench-import",
        "--input",
        &fixture("benchmarks.csv"),
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let records = v["result"].as_array().unwrap();
    // 4 host curves + 24 CSDs x 4 curves, one row per sampled batch.
    assert_eq!(records.len(), 15 + 24 * 14);
    assert_eq!(records[0]["node_id"], "host");
}

#[test]
fn bench_import_rejects_duplicates_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    let mut f = fs::File::create(&bad).unwrap();
    writeln!(f, "node_id,network,batch_size,images_per_sec").unwrap();
    writeln!(f, "csd0,mobilenetv2,25,3.08").unwrap();
    writeln!(f, "csd0,mobilenetv2,25,3.00").unwrap();
    drop(f);
    let out = stannis(&[
        "bench-import",
        "--input",
        bad.to_str().unwrap(),
        "--output",
        dir.path().join("out.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("line 3"), "{err}");
}

#[test]
fn partition_rejects_infeasible_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let tune_path = dir.path().join("tune.json");
    let out = stannis(&[
        "tune",
        "--cluster",
        &fixture("cluster_24csd.json"),
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--output",
        tune_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let data_path = dir.path().join("tiny.json");
    fs::write(&data_path, r#"{"public_total": 10, "private_per_node": {}}"#).unwrap();
    let out = stannis(&[
        "partition",
        "--tune",
        tune_path.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--output",
        dir.path().join("plan.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("insufficient data"), "{err}");
}

#[test]
fn partition_writes_manifest_csv() {
    let dir = tempfile::tempdir().unwrap();
    let tune_path = dir.path().join("tune.json");
    stannis(&[
        "tune",
        "--cluster",
        &fixture("cluster_24csd.json"),
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--output",
        tune_path.to_str().unwrap(),
    ]);
    let plan_path = dir.path().join("plan.json");
    let csv_path = dir.path().join("manifest.csv");
    let out = stannis(&[
        "partition",
        "--tune",
        tune_path.to_str().unwrap(),
        "--data",
        &fixture("dataset_72k_public_12k_private.json"),
        "--output",
        plan_path.to_str().unwrap(),
        "--manifest-csv",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("node_id,source,sample_id\n"));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&plan_path).unwrap()).unwrap();
    let steps = plan["result"]["epoch_steps"].as_u64().unwrap();
    let total_batch: u64 = 202 + 24 * 25;
    assert_eq!(text.lines().count() as u64 - 1, steps * total_batch);
}

#[test]
fn simulate_requires_tune_or_n_csds() {
    let out = stannis(&[
        "simulate",
        "--cluster",
        &fixture("cluster_24csd.json"),
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--output",
        "/tmp/never.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("--n-csds"), "{err}");
}

#[test]
fn calibrate_underdetermined_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets.json");
    fs::write(
        &targets,
        r#"{
  "targets": [{"n_csds": 24, "metric": {"speedup_vs_host": 2.7}}],
  "free_params": ["sync_per_param_overhead", "sync_alpha_sec"],
  "sweeps": 2
}"#,
    )
    .unwrap();
    let out = stannis(&[
        "calibrate",
        "--cluster",
        &fixture("cluster_24csd.json"),
        "--network",
        &fixture("networks/mobilenetv2.json"),
        "--targets",
        targets.to_str().unwrap(),
        "--output",
        dir.path().join("fit.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("under-determined"), "{err}");
}
