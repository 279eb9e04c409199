use std::path::Path;
use std::process::{Command, Output};

fn oocd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oocd"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run oocd")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = oocd(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const GEN: &str = "n_docs = 300\nblock_size = 60\nbackground_size = 150\nmean_len = 40.0\n";

const RUN: &str = r#"
[paths]
corpus = "data/corpus.jsonl"
scenario = "data/scenario.json"
[embed]
dim = 16
epochs = 2
[classifier]
widths = [2, 3]
maps = 6
epochs = 2
refresh_every = 5
max_refreshes = 2
"#;

fn setup(dir: &Path) {
    std::fs::write(dir.join("gen.toml"), GEN).unwrap();
    std::fs::write(dir.join("run.toml"), RUN).unwrap();
    ok(dir, &["synth", "--config", "gen.toml", "--out", "data", "--seed", "2"]);
}

#[test]
fn pipeline_equals_composition_of_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let common = ["--config", "run.toml", "--seed", "2"];
    let whole = ok(d, &[&["pipeline", "--workdir", "w1"][..], &common].concat());
    for cmd in ["ingest", "embed", "pseudo", "train", "score", "eval"] {
        ok(d, &[&[cmd, "--workdir", "w2"][..], &common].concat());
    }
    let a = std::fs::read(d.join("w1/report.json")).unwrap();
    let b = std::fs::read(d.join("w2/report.json")).unwrap();
    assert_eq!(a, b);
    let printed: serde_json::Value = serde_json::from_slice(&whole.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(printed, saved);
    for key in ["auroc", "aupr", "f1_at_o", "gamma"] {
        assert!(saved[key].is_number(), "{key}");
    }

    ok(d, &["dump-vectors", "--workdir", "w1", "--out", "vecs"]);
    for f in ["words.vec", "docs.vec", "cats.vec"] {
        assert_eq!(std::fs::read(d.join("vecs").join(f)).unwrap(), std::fs::read(d.join("w1/vectors").join(f)).unwrap());
    }
}

#[test]
fn eval_without_scores_reports_missing_score_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = oocd(dir.path(), &["eval", "--workdir", "w"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing artifact from stage `score`"), "{err}");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[embed]\nbogus = 1\n").unwrap();
    assert_eq!(oocd(d, &["embed", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(oocd(d, &["pipeline", "--keep-ratio", "1.5"]).status.code(), Some(2));
    assert_eq!(oocd(d, &["pipeline", "--relevance", "nearest"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.jsonl"), "{\"id\":\"a\",\"text\":\"hockey puck\"}\n").unwrap();
    std::fs::write(d.join("s.json"), "{\"targets\":[\"hockey\",\"cosmos\"]}").unwrap();
    let out = oocd(d, &["ingest", "--corpus", "c.jsonl", "--scenario", "s.json", "--workdir", "w"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn aggregate_averages_seed_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("r")).unwrap();
    for (seed, auroc) in [(0, 0.9), (1, 0.8), (2, 0.7)] {
        let report = serde_json::json!({
            "method": "oocd_d", "auroc": auroc, "aupr": auroc - 0.1, "f1_at_o": 0.5,
            "gamma": 0.3, "o": 20, "n": 100, "p_out": 0.2
        });
        std::fs::write(d.join(format!("r/report_oocd_d_seed{seed}.json")), report.to_string()).unwrap();
    }
    ok(d, &["aggregate", "r", "--out", "agg.json"]);
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("agg.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["method"], "oocd_d");
    assert_eq!(rows[0]["runs"], 3);
    assert!((rows[0]["auroc"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((rows[0]["aupr"].as_f64().unwrap() - 0.7).abs() < 1e-12);
}
