use std::path::{Path, PathBuf};
use std::process::Command;

use cogdiag_cli::report::{check_schema, RadarData};
use serde_json::{json, Value};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cogdiag(dir: &Path, args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_cogdiag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    Outcome {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const CATALOG: &str = r#"[
  {"id": "recon", "kind": "forget", "domain": "attack"},
  {"id": "exfil", "kind": "forget", "domain": "attack"},
  {"id": "hardening", "kind": "retain", "domain": "defense"}
]"#;

const QMATRIX: &str = r#"{
  "exercises": ["e1", "e2", "e3", "e4"],
  "concepts": ["recon", "exfil", "hardening"],
  "rows": [[1,0,0],[0,1,0],[1,1,0],[0,0,1]]
}"#;

fn toy_logs() -> String {
    let mut s = String::new();
    for (i, st) in ["s1", "s2", "s3"].iter().enumerate() {
        for (j, e) in ["e1", "e2", "e3", "e4"].iter().enumerate() {
            let score = u8::from((i + j) % 2 == 0);
            s.push_str(&format!("{{\"student\":\"{st}\",\"exercise\":\"{e}\",\"score\":{score}}}\n"));
        }
    }
    s
}

fn toy_dataset(dir: &Path, logs: &str) -> Vec<String> {
    write(dir, "catalog.json", CATALOG);
    write(dir, "qmatrix.json", QMATRIX);
    write(dir, "logs.jsonl", logs);
    ["--catalog", "catalog.json", "--qmatrix", "qmatrix.json", "--logs", "logs.jsonl"]
        .map(String::from)
        .to_vec()
}

fn args<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(tail.iter().map(String::as_str)).collect()
}

// ------------------------------------------------------------------ ingest

#[test]
fn ingest_clean_dataset_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path(), &toy_logs());
    let out = cogdiag(dir.path(), &args(&["ingest", "--out", "canon"], &data));
    assert_eq!(out.code, 0, "{}", out.stderr);
    for f in ["catalog.json", "qmatrix.json", "registry.json", "logs.jsonl"] {
        assert!(dir.path().join("canon").join(f).is_file(), "{f} missing");
    }
    let again = cogdiag(
        dir.path(),
        &["ingest", "--catalog", "canon/catalog.json", "--qmatrix", "canon/qmatrix.json", "--logs", "canon/logs.jsonl",
          "--registry", "canon/registry.json", "--out", "canon2"],
    );
    assert_eq!(again.code, 0, "{}", again.stderr);
    assert_eq!(
        std::fs::read(dir.path().join("canon/logs.jsonl")).unwrap(),
        std::fs::read(dir.path().join("canon2/logs.jsonl")).unwrap()
    );
}

#[test]
fn ingest_malformed_line_is_a_parse_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = toy_logs();
    let lines: Vec<&str> = logs.lines().collect();
    logs = format!("{}\n{}\n{{\"student\": \"s1\", \"exercise\": \n{}\n", lines[0], lines[1], lines[2..].join("\n"));
    let data = toy_dataset(dir.path(), &logs);
    let out = cogdiag(dir.path(), &args(&["ingest", "--out", "canon"], &data));
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert!(out.stderr.contains("line 3"), "{}", out.stderr);
}

#[test]
fn ingest_dangling_exercise_is_a_validation_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let logs = format!("{}{{\"student\":\"s1\",\"exercise\":\"e99\",\"score\":1}}\n", toy_logs());
    let data = toy_dataset(dir.path(), &logs);
    let out = cogdiag(dir.path(), &args(&["ingest", "--out", "canon"], &data));
    assert_eq!(out.code, 3, "{}", out.stderr);
    assert!(out.stderr.contains("e99"), "{}", out.stderr);
    assert!(!dir.path().join("canon/logs.jsonl").exists());
}

// ---------------------------------------------------------------- simulate

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(cogdiag(dir.path(), &["simulate", "--out", out, "--seed", "11"]).code, 0);
    }
    for f in ["catalog.json", "qmatrix.json", "registry.json", "logs.jsonl", "truth.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert_eq!(cogdiag(dir.path(), &["simulate", "--out", "c", "--seed", "12"]).code, 0);
    assert_ne!(
        std::fs::read(dir.path().join("a/logs.jsonl")).unwrap(),
        std::fs::read(dir.path().join("c/logs.jsonl")).unwrap()
    );
}

#[test]
fn default_spec_has_base_and_four_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = cogdiag(dir.path(), &["simulate", "--out", "data"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let registry: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/registry.json")).unwrap()).unwrap();
    let ids: Vec<&str> = registry.as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    let checkpoints: Vec<&str> = ids.iter().copied().filter(|id| id.starts_with("base/")).collect();
    assert_eq!(checkpoints, ["base/uniform/0", "base/uniform/1", "base/uniform/2", "base/uniform/3", "base/uniform/4"]);
}

fn expected_accuracy(summary: &str, student: &str) -> f64 {
    let line = summary
        .lines()
        .find(|l| l.split_whitespace().next() == Some(student))
        .unwrap_or_else(|| panic!("{student} not in summary:\n{summary}"));
    let cols: Vec<&str> = line.split_whitespace().collect();
    cols[cols.len() - 2].parse().unwrap()
}

#[test]
fn equal_aggregate_spec_matches_within_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "spec.toml",
        r#"
seed = 4
exercises = 300
base_mastery = 0.9

[cohort]
students = 10

[[trajectories]]
label = "selective"
mode = "selective"
targeted = ["discovery", "collection", "impact", "exfiltration"]
decay_rate = 0.6

[[trajectories]]
label = "uniform"
mode = "uniform"
match_accuracy_of = "selective"
"#,
    );
    let out = cogdiag(dir.path(), &["simulate", "--spec", "spec.toml", "--out", "data"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let sel = expected_accuracy(&out.stdout, "base/selective/4");
    let uni = expected_accuracy(&out.stdout, "base/uniform/4");
    assert!((sel - uni).abs() <= 0.01, "selective {sel} vs uniform {uni}");
    assert!(expected_accuracy(&out.stdout, "base/selective/0") - sel > 0.05);
}

#[test]
fn invalid_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.toml", "exercises = 0\n");
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "bad.toml", "--out", "data"]).code, 3);
    write(dir.path(), "typo.toml", "exercise = 10\n");
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "typo.toml", "--out", "data"]).code, 2);
}

// ---------------------------------------------------------------- diagnose

fn run_config(dir: &Path, methods: &str, extra: &str) -> PathBuf {
    write(
        dir,
        "run.toml",
        &format!(
            "catalog = \"data/catalog.json\"\nqmatrix = \"data/qmatrix.json\"\nlogs = \"data/logs.jsonl\"\n\
             registry = \"data/registry.json\"\nmethods = [{methods}]\nseed = 1\n{extra}"
        ),
    )
}

#[test]
fn empty_method_set_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cogdiag(dir.path(), &["simulate", "--out", "data"]).code, 0);
    run_config(dir.path(), "", "");
    let out = cogdiag(dir.path(), &["diagnose", "run.toml"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("method set is empty"), "{}", out.stderr);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unreachable_judge_fails_fewshot_but_keeps_report() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.toml", "exercises = 60\n[cohort]\nstudents = 5\n");
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "spec.toml", "--out", "data"]).code, 0);
    run_config(
        dir.path(),
        "\"ncdm\", \"fewshot\"",
        "[ncdm]\nepochs = 3\n[fewshot]\nsample_size = 1\njudge = { kind = \"http\", url = \"http://127.0.0.1:1/judge\", timeout_secs = 2 }\n",
    );
    let out = cogdiag(dir.path(), &["diagnose", "run.toml"]);
    assert_eq!(out.code, 5, "{}", out.stderr);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let status = |m: &str| {
        report["methods"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| s["method"] == m)
            .unwrap()["status"]
            .clone()
    };
    assert_eq!(status("fewshot"), "failed");
    assert_eq!(status("ncdm"), "ok");
    assert!(dir.path().join("out/transcripts.jsonl").is_file());
}

#[test]
fn selective_trajectory_shrinks_only_the_targeted_concept() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "spec.toml",
        r#"
seed = 8
exercises = 1500
base_mastery = 0.9

[cohort]
students = 80

[[trajectories]]
label = "selective"
mode = "selective"
targeted = ["defense-evasion"]
decay_rate = 0.6
"#,
    );
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "spec.toml", "--out", "data"]).code, 0);
    run_config(dir.path(), "\"ncdm\"", "");
    let out = cogdiag(dir.path(), &["diagnose", "run.toml"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let radar: RadarData = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/radar.json")).unwrap()).unwrap();
    let at = |step: u32| {
        &radar
            .series
            .iter()
            .find(|s| s.method == "ncdm" && s.student == format!("base/selective/{step}"))
            .unwrap()
            .values
    };
    let target = radar.concepts.iter().position(|c| c == "defense-evasion").unwrap();
    let series: Vec<f64> = (0..=4).map(|t| at(t)[target]).collect();
    assert!(series[0] - series[4] >= 0.3, "targeted concept {series:?}");
    for (k, concept) in radar.concepts.iter().enumerate().filter(|(k, _)| *k != target) {
        let moved = (at(4)[k] - at(0)[k]).abs();
        assert!(moved < 0.15, "{concept} moved {moved:.3}");
    }
}

#[test]
fn ncdm_and_icdm_agree_on_doa() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.toml", "seed = 2\nexercises = 400\n[cohort]\nstudents = 150\n");
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "spec.toml", "--out", "data"]).code, 0);
    run_config(dir.path(), "\"ncdm\", \"icdm\"", "");
    let out = cogdiag(dir.path(), &["diagnose", "run.toml"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(check_schema(&report).is_empty());
    let n = report["doa"]["ncdm"]["overall"].as_f64().unwrap();
    let i = report["doa"]["icdm"]["overall"].as_f64().unwrap();
    assert!(n >= 0.7 && i >= 0.7, "ncdm {n}, icdm {i}");
    assert!((n - i).abs() <= 0.1, "ncdm {n}, icdm {i}");

    let states = dir.path().join("out/states.csv");
    let doa = cogdiag(
        dir.path(),
        &["doa", "--states", states.to_str().unwrap(), "--method", "ncdm", "--catalog", "data/catalog.json",
          "--qmatrix", "data/qmatrix.json", "--logs", "data/logs.jsonl", "--registry", "data/registry.json"],
    );
    assert_eq!(doa.code, 0, "{}", doa.stderr);
    assert!(doa.stdout.contains(&format!("{n:.4}")), "{}\nvs {n}", doa.stdout);

    let check = cogdiag(dir.path(), &["report", "out/report.json", "--check"]);
    assert_eq!(check.code, 0, "{}", check.stderr);
}

#[test]
fn methods_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.toml", "exercises = 60\n[cohort]\nstudents = 8\n");
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "spec.toml", "--out", "data"]).code, 0);
    run_config(dir.path(), "\"ncdm\"", "[icdm]\nepochs = 2\n");
    let out = cogdiag(dir.path(), &["diagnose", "run.toml", "--methods", "icdm", "--out", "elsewhere"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("elsewhere/report.json")).unwrap()).unwrap();
    let methods: Vec<&str> = report["methods"].as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["icdm"]);
}

// --------------------------------------------------------------- correlate

#[test]
fn correlate_reproduces_table_icdm_value() {
    let dir = tempfile::tempdir().unwrap();
    let table = fixture("published_results.csv");
    let out = cogdiag(dir.path(), &["correlate", table.to_str().unwrap(), "--pairs", "acc:ms_icdm", "--out", "r.csv"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let rec = rows.records().next().unwrap().unwrap();
    let r: f64 = rec[headers.iter().position(|h| h == "r").unwrap()].parse().unwrap();
    assert!((r - 0.96).abs() <= 0.005, "{r}");
}

#[test]
fn correlate_self_pair_and_short_input() {
    let dir = tempfile::tempdir().unwrap();
    let table = fixture("published_results.csv");
    let out = cogdiag(dir.path(), &["correlate", table.to_str().unwrap(), "--pairs", "ms_ncdm:ms_ncdm"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("1.0"), "{}", out.stdout);

    write(dir.path(), "two.csv", "x,y\n1,2\n2,5\n");
    let out = cogdiag(dir.path(), &["correlate", "two.csv", "--pairs", "x:y"]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("insufficient rows"), "{}", out.stderr);
}

// -------------------------------------------------------------- objectives

#[test]
fn objectives_eval_reads_requests() {
    let dir = tempfile::tempdir().unwrap();
    let requests = json!([
        {"op": "npo", "batch": [{"token_logprobs": [-0.5], "ref_token_logprobs": [-0.5]}]},
        {"op": "task_vector", "f0": [1.0, 2.0], "f_reinforce": [1.5, 2.0], "alpha": 5.0},
        {"op": "kl", "p": [0.5, 0.5], "q": [0.25, 0.75]}
    ]);
    write(dir.path(), "req.json", &requests.to_string());
    let out = cogdiag(dir.path(), &["objectives", "eval", "req.json"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert!((v[0]["value"].as_f64().unwrap() - 20.0 * 2f64.ln()).abs() < 1e-9);
    assert_eq!(v[1]["value"], json!([-1.5, 2.0]));
    let kl = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((v[2]["value"].as_f64().unwrap() - kl).abs() < 1e-12);

    write(dir.path(), "bad.json", r#"{"op": "kl", "p": [0.5, 0.5], "q": [1.0]}"#);
    assert_eq!(cogdiag(dir.path(), &["objectives", "eval", "bad.json"]).code, 3);
    write(dir.path(), "junk.json", r#"{"op": "nope"}"#);
    assert_eq!(cogdiag(dir.path(), &["objectives", "eval", "junk.json"]).code, 2);
}

// ------------------------------------------------------------------ report

#[test]
fn report_check_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.toml", "exercises = 80\n[cohort]\nstudents = 12\n");
    assert_eq!(cogdiag(dir.path(), &["simulate", "--spec", "spec.toml", "--out", "data"]).code, 0);
    run_config(dir.path(), "\"ncdm\", \"fewshot\"", "[ncdm]\nepochs = 4\n[fewshot]\nsample_size = 2\n");
    assert_eq!(cogdiag(dir.path(), &["diagnose", "run.toml"]).code, 0);

    let path = dir.path().join("out/report.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(check_schema(&value), Vec::<String>::new());
    let last_top_level_key = text.rfind("\n  \"").unwrap();
    assert!(text[last_top_level_key..].starts_with("\n  \"provenance\""));

    let ok = cogdiag(dir.path(), &["report", "out/report.json", "--check"]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert!(!ok.stdout.is_empty());

    let mut edited = value.clone();
    edited["dataset"]["students"] = json!(9999);
    write(dir.path(), "edited.json", &serde_json::to_string_pretty(&edited).unwrap());
    assert_eq!(cogdiag(dir.path(), &["report", "edited.json", "--check"]).code, 3);

    let mut old = value;
    old["schema_version"] = json!(0);
    write(dir.path(), "old.json", &serde_json::to_string_pretty(&old).unwrap());
    assert_ne!(cogdiag(dir.path(), &["report", "old.json", "--check"]).code, 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cogdiag(dir.path(), &["frobnicate"]).code, 2);
    assert_eq!(cogdiag(dir.path(), &["correlate", "x.csv", "--pairs", "a:b", "--against", "a"]).code, 2);
    assert_eq!(cogdiag(dir.path(), &["--help"]).code, 0);
}
