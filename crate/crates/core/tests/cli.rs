use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn underloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_underloc"))
        .args(args)
        .env_remove("UNDERLOC_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, views: &str) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&underloc(&["synth", "--out", s(&data), "--views", views, "--jitter", "4"]));
    (data.join("query.jsonl"), data.join("database.jsonl"))
}

#[test]
fn missing_manifest_exits_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/query.jsonl");
    let out = underloc(&["run", "--query", s(&missing), "--database", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(s(&missing)), "{err}");
}

#[test]
fn invalid_k_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (q, d) = synth(dir.path(), "4");
    let out = underloc(&["run", "--query", s(&q), "--database", s(&d), "-K", "0", "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("invalid k:"), "{err}");
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (q, d) = synth(dir.path(), "16");
    let r = dir.path().join("run");
    ok(&underloc(&[
        "run", "--query", s(&q), "--database", s(&d), "--out", s(&r), "--baseline", "random", "--dump-similarity",
    ]));
    for f in ["metrics.json", "recall.csv", "pr.csv", "registrations.jsonl", "config.json", "timing.json", "similarity.uls"] {
        assert!(r.join(f).is_file(), "{f} missing");
    }
    let recall = fs::read_to_string(r.join("recall.csv")).unwrap();
    let header = recall.lines().next().unwrap();
    assert!(header.split(',').any(|c| c == "random"), "{header}");
    assert_eq!(recall.lines().count(), 11);
    assert!(fs::read_dir(r.join("overlays")).unwrap().count() > 0);

    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["config"]["pipeline"]["k"], 10);
    assert_eq!(metrics["counters"]["hierarchical"]["local_match_invocations"], 160);
    assert_eq!(fs::read_to_string(r.join("registrations.jsonl")).unwrap().lines().count(), 16);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (q, d) = synth(dir.path(), "9");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&underloc(&[
        "run", "--query", s(&q), "--database", s(&d), "--out", s(&a), "--seed", "7", "-K", "5", "--baseline", "bruteforce",
    ]));
    ok(&underloc(&["run", "--config", s(&a.join("config.json")), "--out", s(&b)]));
    for f in ["metrics.json", "registrations.jsonl", "recall.csv", "pr.csv", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

fn seed_of(dir: &Path) -> u64 {
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    cfg["pipeline"]["seed"].as_u64().unwrap()
}

#[test]
fn seed_environment_variable_applies_only_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (q, d) = synth(dir.path(), "4");
    let run = |out: &Path, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_underloc"));
        cmd.args(["run", "--query", s(&q), "--database", s(&d), "--out", s(out)])
            .args(extra)
            .env("UNDERLOC_SEED", "123");
        let o = cmd.output().unwrap();
        ok(&o);
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, &[]);
    run(&b, &["--seed", "5"]);
    assert_eq!(seed_of(&a), 123);
    assert_eq!(seed_of(&b), 5);
}

#[test]
fn baseline_gt_and_iou_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let (q, d) = synth(dir.path(), "9");
    let base = dir.path().join("base");
    ok(&underloc(&["baseline", "--kind", "bruteforce", "--query", s(&q), "--database", s(&d), "--out", s(&base)]));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(base.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["local_match_invocations"], 81);
    assert!(base.join("pr.csv").is_file());

    let gt = dir.path().join("gt.csv");
    ok(&underloc(&["gt", "--query", s(&q), "--database", s(&d), "--out", s(&gt)]));
    assert_eq!(fs::read_to_string(&gt).unwrap().lines().count(), 10);

    let run = dir.path().join("run");
    ok(&underloc(&["run", "--query", s(&q), "--database", s(&d), "--out", s(&run), "--no-iou"]));
    let iou = dir.path().join("iou");
    ok(&underloc(&[
        "iou", "--query", s(&q), "--database", s(&d), "--registrations", s(&run.join("registrations.jsonl")), "--out", s(&iou),
    ]));
    let csv = fs::read_to_string(iou.join("iou.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("query_id,database_id,iou"));
    assert!(csv.lines().count() > 1);
}

#[test]
fn extract_writes_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = synth(dir.path(), "4");
    let feats = dir.path().join("feats");
    ok(&underloc(&["extract", "--images", s(&dir.path().join("data/images")), "--out", s(&feats)]));
    let global = underloc::dataio::read_descriptors(&feats.join("global.uld")).unwrap();
    assert_eq!(global.len(), 8);
    let kps = underloc::dataio::read_keypoints(&feats.join("keypoints.ulk")).unwrap();
    assert_eq!(kps.len(), 8);
}
