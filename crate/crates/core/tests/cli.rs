use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SPEC: &str = r#"{
    "kind": "sudden",
    "models": {
        "base": {"builtin": "loan"},
        "re": {"from": "base", "edits": [{"op": "remove_fragment", "path": [3, 1]}]}
    },
    "segments": [["base", 500], ["re", 500], ["base", 500]]
}"#;

fn procdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procdrift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn generate(dir: &TempDir, log: &str, seed: &str) -> (String, String) {
    let spec = path(dir, "spec.json");
    fs::write(&spec, SPEC).unwrap();
    let (log, gold) = (path(dir, log), path(dir, "gold.json"));
    let out = procdrift(&["generate", &spec, "--seed", seed, "--log", &log, "--gold", &gold]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (log, gold)
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid json on stdout")
}

#[test]
fn generate_detect_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let (log, gold) = generate(&dir, "log.xes", "4");
    let gold_json: Value = serde_json::from_str(&fs::read_to_string(&gold).unwrap()).unwrap();
    assert_eq!(gold_json["sudden"], serde_json::json!([500, 1000]));

    let series = path(&dir, "p.csv");
    let out = procdrift(&["detect", &log, "--p-series", &series, "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["traces"], 1500);
    assert_eq!(report["config"]["seed"], 4);
    let sudden = report["sudden"].as_array().unwrap();
    assert_eq!(sudden.len(), 2, "{report}");
    assert!(sudden.iter().all(|s| s["type"] == "sudden"));
    let csv = fs::read_to_string(&series).unwrap();
    assert!(csv.starts_with("stream_index,p_value,window_size\n"));

    let report_path = path(&dir, "report.json");
    fs::write(&report_path, &out.stdout).unwrap();
    let out = procdrift(&["evaluate", &report_path, &gold]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = json(&out.stdout);
    assert_eq!(scores["sudden"]["tp"], 2);
    assert_eq!(scores["sudden"]["f_score"], 1.0);
}

#[test]
fn generation_and_detection_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, _) = generate(&dir, "a.csv", "11");
    let (b, _) = generate(&dir, "b.csv", "11");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let first = procdrift(&["detect", &a, "--gradual"]);
    let second = procdrift(&["detect", &b, "--gradual"]);
    assert!(first.status.success());
    let (mut r1, mut r2) = (json(&first.stdout), json(&second.stdout));
    // the log id follows the file name
    r1["log_id"] = Value::Null;
    r2["log_id"] = Value::Null;
    assert_eq!(r1, r2);
}

#[test]
fn csv_and_xes_inputs_agree() {
    let dir = TempDir::new().unwrap();
    let (xes, _) = generate(&dir, "log.xes", "2");
    let (csv, _) = generate(&dir, "log.csv", "2");
    let from_xes = json(&procdrift(&["detect", &xes]).stdout);
    let from_csv = json(&procdrift(&["detect", &csv, "--format", "csv"]).stdout);
    assert_eq!(from_xes["sudden"], from_csv["sudden"]);
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn malformed_inputs_exit_with_parse_code() {
    let dir = TempDir::new().unwrap();
    let broken = path(&dir, "broken.xes");
    fs::write(&broken, "<log><trace><event>").unwrap();
    assert_eq!(exit_code(&procdrift(&["detect", &broken])), 2);

    let headless = path(&dir, "headless.csv");
    fs::write(&headless, "a,b\n1,2\n").unwrap();
    assert_eq!(exit_code(&procdrift(&["detect", &headless])), 2);

    let report = path(&dir, "report.json");
    fs::write(&report, r#"{"schema_version": 1, "surprise": true}"#).unwrap();
    let gold = path(&dir, "gold.json");
    fs::write(&gold, r#"{"sudden": [], "gradual": []}"#).unwrap();
    assert_eq!(exit_code(&procdrift(&["evaluate", &report, &gold])), 2);
}

#[test]
fn invalid_settings_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let (log, _) = generate(&dir, "log.xes", "1");
    assert_eq!(exit_code(&procdrift(&["detect", &log, "--threshold", "1.5"])), 3);
    assert_eq!(exit_code(&procdrift(&["detect", &log, "--window", "100", "--buffer", "150"])), 3);
    assert_eq!(
        exit_code(&procdrift(&["detect", &log, "--gradual", "--gradual-alpha", "0"])),
        3
    );

    let spec = path(&dir, "bad_spec.json");
    fs::write(&spec, r#"{"kind": "sudden", "models": {"m": {"act": "a"}}, "segments": [["x", 5]]}"#).unwrap();
    let out = procdrift(&["generate", &spec, "--log", &path(&dir, "x.xes"), "--gold", &path(&dir, "x.json")]);
    assert_eq!(exit_code(&out), 3);
    assert!(!Path::new(&path(&dir, "x.xes")).exists());
}

#[test]
fn missing_input_is_an_io_failure() {
    let out = procdrift(&["detect", "/nonexistent/log.xes"]);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
