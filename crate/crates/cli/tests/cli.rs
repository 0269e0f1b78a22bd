use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_divctx");

fn divctx(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn divctx")
}

fn ok(args: &[&str]) -> String {
    let out = divctx(args);
    assert!(out.status.success(), "divctx {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small planted corpus written by `divctx synth`.
fn corpus(dir: &TempDir) -> PathBuf {
    let root = dir.path().join("corpus");
    ok(&["synth", "--seed", "11", "--users", "4", "--contexts", "5", "--items-per-context", "10", "--out", p(&root)]);
    root
}

fn with_corpus<'a>(cmd: &'a str, root: &'a Path, out: &'a Path) -> Vec<String> {
    let mut args = vec![cmd.to_string()];
    for (flag, file) in [("--schema", "schema.toml"), ("--catalog", "catalog.jsonl"), ("--log", "log.jsonl")] {
        args.push(flag.into());
        args.push(root.join(file).display().to_string());
    }
    args.push("--out".into());
    args.push(out.display().to_string());
    args
}

fn run(args: &[String]) -> Output {
    divctx(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    reader.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

#[test]
fn synth_recovers_planted_boundaries() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let recall: f64 = column(&root.join("ground_truth_eval.csv"), "recall")[0].parse().unwrap();
    assert!(recall >= 0.95);
    for file in ["schema.toml", "catalog.jsonl", "log.jsonl", "ground_truth.jsonl", "h1.csv", "config.json"] {
        assert!(root.join(file).exists(), "{file} missing");
    }
}

#[test]
fn missing_catalog_fails_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let out = divctx(&["detect", "--schema", "nope.toml", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn randomized_commands_require_seed() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let mut args = with_corpus("h2", &root, &dir.path().join("h2"));
    args.extend(["--rates".into(), "0".into()]);
    assert!(!run(&args).status.success());
}

#[test]
fn malformed_catalog_line_is_reported() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let mut catalog = fs::read_to_string(root.join("catalog.jsonl")).unwrap();
    catalog.push_str("{not json\n");
    fs::write(root.join("catalog.jsonl"), catalog).unwrap();
    let out = run(&with_corpus("stats", &root, &dir.path().join("stats")));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn unreachable_threshold_yields_no_changes() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let out = dir.path().join("detect");
    let mut args = with_corpus("detect", &root, &out);
    args.extend(["--tau".into(), "1.0".into()]);
    assert!(run(&args).status.success());
    assert_eq!(fs::read_to_string(out.join("changes.jsonl")).unwrap(), "");
    assert_eq!(fs::read_to_string(out.join("trace.jsonl")).unwrap().lines().count(), 4 * 5 * 10);
}

#[test]
fn detect_is_reproducible_and_leaves_inputs_alone() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let inputs: Vec<Vec<u8>> = ["schema.toml", "catalog.jsonl", "log.jsonl"]
        .iter()
        .map(|f| fs::read(root.join(f)).unwrap())
        .collect();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&with_corpus("detect", &root, &a)).status.success());
    assert!(run(&with_corpus("detect", &root, &b)).status.success());
    for file in ["trace.jsonl", "changes.jsonl"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    for (f, before) in ["schema.toml", "catalog.jsonl", "log.jsonl"].iter().zip(inputs) {
        assert_eq!(fs::read(root.join(f)).unwrap(), before, "{f} changed");
    }
}

#[test]
fn zero_sparsity_matches_h1() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let (h1, h2) = (dir.path().join("h1"), dir.path().join("h2"));
    assert!(run(&with_corpus("h1", &root, &h1)).status.success());
    let mut args = with_corpus("h2", &root, &h2);
    args.extend(["--rates".into(), "0".into(), "--seed".into(), "5".into()]);
    assert!(run(&args).status.success());
    assert_eq!(column(&h1.join("h1.csv"), "session_rate"), column(&h2.join("sweep.csv"), "session_rate"));
    assert_eq!(column(&h1.join("h1.csv"), "total_changes"), column(&h2.join("sweep.csv"), "total_changes"));
}

#[test]
fn full_width_type_split_has_zero_spread() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let out = dir.path().join("h3");
    let mut args = with_corpus("h3", &root, &out);
    args.extend(["--attrs-per-type", "13,5", "--min-common", "13,2", "--runs", "4", "--seed", "3"].map(String::from));
    assert!(run(&args).status.success());
    let table = rows(&out.join("type_split.csv"));
    assert_eq!(table.len(), 2);
    assert_eq!(column(&out.join("type_split.csv"), "session_rate_sd")[0], "0.0");
    assert_eq!(column(&out.join("type_split.csv"), "contexts_sd")[0], "0.0");
}

#[test]
fn calibrate_rejects_empty_log() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    fs::write(root.join("log.jsonl"), "").unwrap();
    let out = run(&with_corpus("calibrate", &root, &dir.path().join("cal")));
    assert!(!out.status.success());
}

#[test]
fn identical_items_calibrate_to_zero() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let first = fs::read_to_string(root.join("catalog.jsonl")).unwrap().lines().next().unwrap().to_string();
    let id = serde_json::from_str::<serde_json::Value>(&first).unwrap()["id"].as_str().unwrap().to_string();
    let log: String = (0..20).map(|i| format!("{{\"user\":\"u\",\"ts\":{},\"item\":\"{id}\"}}\n", i * 60)).collect();
    fs::write(root.join("log.jsonl"), log).unwrap();
    let out = dir.path().join("cal");
    assert!(run(&with_corpus("calibrate", &root, &out)).status.success());
    assert_eq!(column(&out.join("calibration.csv"), "tau"), ["0.0"]);
    assert_eq!(column(&out.join("calibration.csv"), "sd"), ["0.0"]);
}

#[test]
fn stats_flags_absent_attributes() {
    let dir = TempDir::new().unwrap();
    let root = corpus(&dir);
    let schema = fs::read_to_string(root.join("schema.toml")).unwrap();
    fs::write(
        root.join("schema.toml"),
        format!("{schema}\n[[attribute]]\nname = \"label\"\nkind = \"binary\"\n"),
    )
    .unwrap();
    let out = dir.path().join("stats");
    assert!(run(&with_corpus("stats", &root, &out)).status.success());
    let names = column(&out.join("stats.csv"), "attribute");
    let absent = column(&out.join("stats.csv"), "absent");
    assert_eq!(names.len(), 14);
    for (name, flag) in names.iter().zip(&absent) {
        assert_eq!(flag == "true", name == "label", "{name}");
    }
}
