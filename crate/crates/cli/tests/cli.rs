use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[synth]
sessions = 300
[model]
d = 16
[pretrain]
epochs = 1
[train]
epochs = 1
[encode]
dim = 32
";

const STAGES: [&str; 8] = ["synth", "preprocess", "pretrain", "candidates", "mine", "encode", "train", "eval"];

struct Work {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    config: PathBuf,
}

fn work() -> Work {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let dir = tmp.path().join("work");
    Work { _tmp: tmp, dir, config }
}

fn dmsrec(w: &Work, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmsrec"))
        .arg("--config")
        .arg(&w.config)
        .arg("--work")
        .arg(&w.dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stdout:\n{}\nstderr:\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    o
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap()
}

#[test]
fn mock_pipeline_writes_every_manifest_and_skips_on_rerun() {
    let w = work();
    ok(dmsrec(&w, &["all", "--mock"]));
    for stage in STAGES {
        let m: serde_json::Value = serde_json::from_slice(&read(&w.dir, &format!("{stage}/manifest.json"))).unwrap();
        assert_eq!(m["stage"], stage);
        assert!(!m["outputs"].as_array().unwrap().is_empty());
    }
    let report = String::from_utf8(read(&w.dir, "eval/report.txt")).unwrap();
    assert!(report.starts_with("Variant"), "{report}");
    assert!(report.contains("Full"));

    let again = stdout(&ok(dmsrec(&w, &["all", "--mock"])));
    for stage in STAGES {
        assert!(again.contains(&format!("{stage}: up-to-date")), "{again}");
    }
    let forced = stdout(&ok(dmsrec(&w, &["--force", "eval"])));
    assert!(forced.contains("eval: done"), "{forced}");
}

#[test]
fn tampered_upstream_blocks_training() {
    let w = work();
    ok(dmsrec(&w, &["all", "--mock"]));
    let path = w.dir.join("candidates/candidates.jsonl");
    let mut body = std::fs::read_to_string(&path).unwrap();
    body = body.replacen("sku", "skv", 1);
    std::fs::write(&path, body).unwrap();
    let o = dmsrec(&w, &["train"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("candidates"));
}

#[test]
fn runs_are_byte_reproducible() {
    let a = work();
    let b = work();
    ok(dmsrec(&a, &["all", "--mock"]));
    ok(dmsrec(&b, &["--sequential", "all", "--mock"]));
    for rel in ["train/metrics.jsonl", "train/model.ckpt", "eval/report.jsonl", "mine/intents.jsonl"] {
        assert_eq!(read(&a.dir, rel), read(&b.dir, rel), "{rel}");
    }
}

#[test]
fn config_errors_exit_with_code_2() {
    let w = work();
    let o = dmsrec(&w, &["--set", "train.sgima=0.3", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dmsrec(&w, &["preprocess"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dmsrec(&w, &["--set", "train.ablation=no_such", "all", "--mock"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_upstream_is_a_lineage_error() {
    let w = work();
    let o = dmsrec(&w, &["pretrain"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn external_input_and_sweep() {
    let w = work();
    ok(dmsrec(&w, &["synth"]));
    let external = w._tmp.path().join("events.tsv");
    std::fs::copy(w.dir.join("synth/events.tsv"), &external).unwrap();
    ok(dmsrec(&w, &["preprocess", "--input", external.to_str().unwrap()]));
    let m: serde_json::Value = serde_json::from_slice(&read(&w.dir, "preprocess/manifest.json")).unwrap();
    assert_eq!(m["inputs"][0]["path"], external.to_str().unwrap());
    for stage in ["pretrain", "candidates"] {
        ok(dmsrec(&w, &[stage]));
    }
    ok(dmsrec(&w, &["mine", "--mock"]));
    ok(dmsrec(&w, &["encode", "--mock"]));
    let out = stdout(&ok(dmsrec(&w, &["sweep", "--param", "sigma", "--values", "0,0.5"])));
    assert!(out.contains("sigma=0") && out.contains("sigma=0.5"), "{out}");
    let lines = std::fs::read_to_string(w.dir.join("sweep/sweep.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}
