use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn prefcurate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefcurate"))
        .args(args)
        .output()
        .expect("spawn prefcurate")
}

fn ok(args: &[&str]) -> String {
    let out = prefcurate(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn gen(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen", "--n", "2000", "--d", "8", "--nuance", "2", "--seed", "7", "--test-n", "500", "--out",
        data.to_str().unwrap(),
    ]);
    data
}

fn run_args<'a>(data: &'a Path, config: &'a Path, out: &'a Path) -> Vec<String> {
    [
        "--corpus", data.join("corpus.jsonl").to_str().unwrap(), "--oracle", data.join("oracle.jsonl").to_str().unwrap(),
        "--test", data.join("test.jsonl").to_str().unwrap(), "--config", config.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run(head: &[&str], rest: &[String]) -> String {
    let mut args: Vec<&str> = head.to_vec();
    args.extend(rest.iter().map(String::as_str));
    ok(&args)
}

#[test]
fn gen_run_report_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path());
    for f in ["corpus.jsonl", "oracle.jsonl", "test.jsonl"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let out = tmp.path().join("run");
    run(&["run"], &run_args(&data, &default_config(), &out));
    for f in ["report.json", "metrics.csv", "labels.jsonl", "content_hash.txt", "curves/iter_0.csv", "density/iter_0.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "completed");
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 6);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + records.len());
    assert_eq!(ok(&["report", "--run", out.to_str().unwrap(), "--format", "csv"]), csv);

    let again = tmp.path().join("again");
    run(&["run"], &run_args(&data, &default_config(), &again));
    assert_eq!(
        std::fs::read_to_string(out.join("content_hash.txt")).unwrap(),
        std::fs::read_to_string(again.join("content_hash.txt")).unwrap()
    );
}

#[test]
fn report_rejects_tampered_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path());
    let out = tmp.path().join("run");
    run(&["run"], &run_args(&data, &default_config(), &out));
    let path = out.join("report.json");
    let mut report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    report["pool_size"] = serde_json::json!(1);
    std::fs::write(&path, report.to_string()).unwrap();
    let status = prefcurate(&["report", "--run", out.to_str().unwrap()]).status;
    assert_eq!(status.code(), Some(4));
}

#[test]
fn baselines_and_roi_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path());
    let targeted = tmp.path().join("targeted");
    run(&["run"], &run_args(&data, &default_config(), &targeted));
    let random = tmp.path().join("random");
    run(
        &["baseline", "--kind", "random", "--matched", targeted.to_str().unwrap()],
        &run_args(&data, &default_config(), &random),
    );
    let spend = |dir: &Path| {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        v["summary"]["annotation_spend"].as_u64().unwrap()
    };
    assert_eq!(spend(&targeted), spend(&random));
    let text = ok(&["report", "--run", random.to_str().unwrap(), "--against", targeted.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["roi"].is_object());

    for kind in ["ai", "human"] {
        let out = tmp.path().join(kind);
        run(&["baseline", "--kind", kind], &run_args(&data, &default_config(), &out));
        assert_eq!(spend(&out), if kind == "ai" { 0 } else { 2000 });
    }
}

#[test]
fn cost_table_values() {
    let text = ok(&["cost"]);
    for v in ["5788.8", "926.7", "813.3"] {
        assert!(text.contains(v), "{v} missing from\n{text}");
    }
    let json: serde_json::Value = serde_json::from_str(&ok(&["cost", "--format", "json"])).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
}

#[test]
fn denoise_writes_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path());
    let out = tmp.path().join("clean.jsonl");
    let text = ok(&[
        "denoise", "--corpus", data.join("corpus.jsonl").to_str().unwrap(), "--labels",
        data.join("oracle.jsonl").to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(text.starts_with("flipped "));
    let labelled = std::fs::read_to_string(data.join("oracle.jsonl")).unwrap().lines().count() - 1;
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), labelled);
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(prefcurate(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(prefcurate(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn invalid_config_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path());
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"batch_fraction": 2}"#).unwrap();
    let rest = run_args(&data, &bad, &tmp.path().join("r"));
    let mut args = vec!["run"];
    args.extend(rest.iter().map(String::as_str));
    let out = prefcurate(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_fraction"));
}

#[test]
fn missing_input_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.jsonl");
    let out = prefcurate(&[
        "run", "--corpus", missing.to_str().unwrap(), "--oracle", missing.to_str().unwrap(), "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
