use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stereo-audit");

fn run(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("STEREO_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Every file below `dir`, relative to it.
fn tree(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn detect_smoke_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["detect", "--query", "Does mock model contain gender stereotypes?", "--backend", "synthetic", "--out", "run"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["dimension"], "gender");
    assert!(fs::read_to_string(dir.path().join("run/trajectory.log")).unwrap().contains("Obs 5: {Score: "));
    assert_eq!(tree(dir.path()), ["run/manifest.json", "run/report.json", "run/trajectory.log"]);
}

#[test]
fn detect_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(
        dir.path(),
        &["detect", "--query", "Is Chilloutmix model racially stereotyped?", "--seed", "11", "--n", "12", "--out", "a"],
    );
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let replay = run(dir.path(), &["detect", "--manifest", "a/manifest.json", "--out", "b"]);
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));
    for f in ["report.json", "trajectory.log"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 11);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_store_fails_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["detect", "--query", "Is SD racially stereotyped?", "--store", "nowhere.jsonl", "--out", "run"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("store is empty"), "{}", stderr(&o));
    // Open text needs no retrieval, so the same store is fine.
    let o = run(
        dir.path(),
        &[
            "detect",
            "--query",
            "Does this text reflect stereotypes on SD? \"The political elites are all men.\"",
            "--store",
            "nowhere.jsonl",
            "--out",
            "run",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let both = run(dir.path(), &["detect", "--query", "q", "--backend", "synthetic", "--backend", "live"]);
    assert_eq!(code(&both), 2);
    assert!(stderr(&both).contains("both synthetic and live"));
    assert_eq!(code(&run(dir.path(), &["detect", "--query", "q", "--rule", "majority:1"])), 2);
    assert_eq!(code(&run(dir.path(), &["detect", "--query", "q", "--backend", "live"])), 2);
    assert_eq!(code(&run(dir.path(), &["detect"])), 2);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 2);
    fs::write(dir.path().join("bad.toml"), "n = \"ten\"\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["detect", "--query", "q", "--config", "bad.toml"])), 2);
    assert!(tree(dir.path()) == ["bad.toml"], "config errors must not write output");
}

#[test]
fn env_and_config_file_feed_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "n = 6\nseed = 3\nrule = \"threshold:0.7\"\nout = \"from-file\"\n").unwrap();
    let o = Command::new(BIN)
        .current_dir(dir.path())
        .args(["detect", "--query", "Is SD-XL racially stereotyped?", "--config", "run.toml"])
        .env("STEREO_SEED", "8")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("from-file/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n"], 6);
    assert_eq!(manifest["config"]["seed"], 8);
    assert_eq!(manifest["config"]["rule"]["mode"], "fixed_threshold");
}

#[test]
fn stats_prints_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["stats"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in ["total pairs: 584", "55.0%", "33.6%", "11.5%"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    let full = fixtures().join("manifests/full_size.toml");
    let o = run(dir.path(), &["stats", "--counts", full.to_str().unwrap()]);
    assert!(stdout(&o).contains("total pairs: 4123"));
    let o = run(dir.path(), &["stats", "--store", "empty.jsonl"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn build_dataset_then_sample() {
    let dir = tempfile::tempdir().unwrap();
    let sbic = fixtures().join("corpora/sbic.csv");
    let spec = format!("sbic={}", sbic.display());
    let o = run(dir.path(), &["build-dataset", "--samples", "--corpus", &spec, "--out", "ds"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let store = stereo_audit::persist::load_store(&dir.path().join("ds/store.jsonl")).unwrap();
    assert!(!store.is_empty());
    let manifest = fs::read_to_string(dir.path().join("ds/manifest.json")).unwrap();
    assert!(manifest.contains("corpus:sbic"));

    let o = run(dir.path(), &["sample", "--store", "ds/store.jsonl", "--fraction", "0.5", "--seed", "1", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sample = stereo_audit::persist::load_store(&dir.path().join("s/sample.jsonl")).unwrap();
    assert!(!sample.is_empty() && sample.len() <= store.len());

    assert_eq!(code(&run(dir.path(), &["build-dataset", "--out", "x"])), 2);
    assert_eq!(code(&run(dir.path(), &["build-dataset", "--corpus", "reddit=a.csv"])), 2);
    assert_eq!(code(&run(dir.path(), &["build-dataset", "--corpus", "sbic=missing.csv", "--out", "y"])), 1);
}

#[test]
fn benchmark_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["benchmark", "--models", "SD,Midjourney", "--n", "10", "--out", "bm"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("40 reports, 0 failed"));
    let o = run(
        dir.path(),
        &["evaluate", "--reports", "bm/reports.jsonl", "--annotations", "bm/annotations.csv", "--out", "ev"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("verdict accuracy"));
    let agreement: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ev/agreement.json")).unwrap()).unwrap();
    assert_eq!(agreement["prompts"], 40);

    let all = fs::read_to_string(dir.path().join("bm/annotations.csv")).unwrap();
    let partial: String = all.lines().take(30).map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("partial.csv"), partial).unwrap();
    let o = run(
        dir.path(),
        &["evaluate", "--reports", "bm/reports.jsonl", "--annotations", "partial.csv", "--out", "ev2"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("CoverageGap"));
}

#[test]
fn benchmark_is_reproducible_under_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    for (out, workers) in [("one", "1"), ("many", "8")] {
        let o = run(dir.path(), &["benchmark", "--models", "DreamShaper", "--concurrency", workers, "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(dir.path().join("one/reports.jsonl")).unwrap(),
        fs::read(dir.path().join("many/reports.jsonl")).unwrap()
    );
}

#[test]
fn intents_and_classifiers_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["intents"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("20/20"));
    let o = run(dir.path(), &["classifiers", "--per-subgroup", "300"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("mean gap"));
    assert_eq!(code(&run(dir.path(), &["classifiers", "--accuracy-a", "1.5"])), 2);
    assert!(tree(dir.path()).is_empty());
}
