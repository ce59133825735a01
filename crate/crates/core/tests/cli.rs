use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semiae::cli::sha256_hex;
use tempfile::TempDir;

const GENRE_FLAGS_100K: usize = 19;

fn semiae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semiae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = semiae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = semiae(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 6 users x 8 items in the ML-100K layout, every user rating 5 items.
fn write_ml100k(dir: &Path) {
    let mut data = String::new();
    for u in 1..=6u32 {
        for k in 0..5u32 {
            let item = (u + k) % 8 + 1;
            let rating = (u * 3 + k * 7) % 5 + 1;
            data.push_str(&format!("{u}\t{item}\t{rating}\t{}\n", 880000000 + u * 10 + k));
        }
    }
    fs::write(dir.join("u.data"), data).unwrap();
    let occupations = ["student", "engineer", "other", "writer", "artist", "doctor"];
    let users: String = (1..=6)
        .map(|u| {
            let g = if u % 2 == 0 { "F" } else { "M" };
            format!("{u}|{}|{g}|{}|0000{u}\n", 15 + 7 * u, occupations[u - 1])
        })
        .collect();
    fs::write(dir.join("u.user"), users).unwrap();
    let items: String = (1..=8)
        .map(|i| {
            let mut flags = vec!["0"; GENRE_FLAGS_100K];
            flags[i % GENRE_FLAGS_100K] = "1";
            flags[(i + 5) % GENRE_FLAGS_100K] = "1";
            format!("{i}|Movie {i} (19{})|01-Jan-19{}||http://x|{}\n", 60 + i, 60 + i, flags.join("|"))
        })
        .collect();
    fs::write(dir.join("u.item"), items).unwrap();
}

fn write_ml1m(dir: &Path) {
    let mut data = String::new();
    for u in 1..=5u32 {
        for k in 0..4u32 {
            let item = (u + 3 * k) % 7 + 1;
            data.push_str(&format!("{u}::{item}::{}::97830{u}{k}\n", (u + k) % 5 + 1));
        }
    }
    fs::write(dir.join("ratings.dat"), data).unwrap();
    let ages = [1, 18, 25, 35, 56];
    let users: String = (1..=5)
        .map(|u| format!("{u}::{}::{}::{}::1234{u}\n", if u % 2 == 0 { "F" } else { "M" }, ages[u - 1], u * 3))
        .collect();
    fs::write(dir.join("users.dat"), users).unwrap();
    let genres = ["Comedy", "Drama|Romance", "Sci-Fi", "Children's|Animation", "Film-Noir", "Western", "Horror"];
    let movies: String = (1..=7)
        .map(|i| format!("{i}::Film {i} ({})::{}\n", 1980 + i, genres[i - 1]))
        .collect();
    fs::write(dir.join("movies.dat"), movies).unwrap();
}

struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
    data: PathBuf,
}

fn prepared_100k() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let raw = root.join("raw");
    fs::create_dir(&raw).unwrap();
    write_ml100k(&raw);
    let data = root.join("prepared.json");
    ok(&["prepare", "--raw", s(&raw), "--format", "ml-100k", "--out", s(&data)]);
    Fixture { _tmp: tmp, root, data }
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

#[test]
fn prepare_reports_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    fs::create_dir(&raw).unwrap();
    write_ml100k(&raw);
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    let out = ok(&["prepare", "--raw", s(&raw), "--format", "ml-100k", "--out", s(&a)]);
    assert_eq!(out.trim(), "M=6 N=8 |Ω|=30 K_user=30 K_item=20");
    ok(&["prepare", "--raw", s(&raw), "--format", "ml-100k", "--out", s(&b)]);
    let (ba, bb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ba, bb);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "prepare");
    assert_eq!(manifest["artifacts"][0]["sha256"], sha256_hex(&ba));
}

#[test]
fn prepare_empty_directory_lists_expected_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p.json");
    let msg = err(&["prepare", "--raw", s(tmp.path()), "--format", "ml-100k", "--out", s(&out)]);
    for name in ["u.data", "u.user", "u.item"] {
        assert!(msg.contains(name), "{msg}");
    }
    let msg = err(&["prepare", "--raw", s(tmp.path()), "--format", "ml-1m", "--out", s(&out)]);
    for name in ["ratings.dat", "users.dat", "movies.dat"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert!(!out.exists());
}

#[test]
fn rating_train_evaluate_roundtrip() {
    let fx = prepared_100k();
    let cfg = write_config(&fx.root, "rating.json", r#"{"hidden_dim": 4, "epochs": 5, "batch_size": 2}"#);
    let model = fx.root.join("rating-model.json");
    ok(&["train", "--data", s(&fx.data), "--task", "rating", "--config", s(&cfg), "--out", s(&model), "--seed", "3"]);

    let log = fs::read_to_string(fx.root.join("rating-model.json.loss.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 6);

    let report: serde_json::Value =
        serde_json::from_str(&ok(&["evaluate", "--model", s(&model), "--data", s(&fx.data)])).unwrap();
    assert_eq!(report["task"], "rating");
    assert!(report["rmse"].as_f64().unwrap() > 0.0);
    assert!(report.get("recall").is_none());
    assert_eq!(report["train_fraction"], 0.8);
    assert_eq!(report["seed"], 3);

    let csv = fx.root.join("rows.csv");
    ok(&["evaluate", "--model", s(&model), "--data", s(&fx.data), "--train-fraction", "0.8", "--seed", "3", "--csv", s(&csv)]);
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("dataset,task,split,seed,metric,value\nml-100k,rating,0.8,3,rmse,"), "{rows}");

    let msg = err(&["evaluate", "--model", s(&model), "--data", s(&fx.data), "--recall", "5,10"]);
    assert!(msg.contains("ranking model"), "{msg}");
    let msg = err(&["evaluate", "--model", s(&model), "--data", s(&fx.data), "--seed", "4"]);
    assert!(msg.contains("leak"), "{msg}");
    let msg = err(&["recommend", "--model", s(&model), "--data", s(&fx.data), "--user", "1", "--n", "3"]);
    assert!(msg.contains("ranking model"), "{msg}");
}

#[test]
fn ranking_train_evaluate_recommend() {
    let fx = prepared_100k();
    let cfg = write_config(&fx.root, "ranking.json", r#"{"epochs": 20, "like_threshold": 3, "like_inclusive": true}"#);
    let model = fx.root.join("ranking-model.json");
    ok(&["train", "--data", s(&fx.data), "--task", "ranking", "--config", s(&cfg), "--out", s(&model), "--train-fraction", "0.5"]);

    let out = ok(&["evaluate", "--model", s(&model), "--data", s(&fx.data), "--recall", "5,10"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let recall = report["recall"].as_object().unwrap();
    assert_eq!(recall.keys().collect::<Vec<_>>(), ["10", "5"]);
    assert!(report.get("rmse").is_none());
    let msg = err(&["evaluate", "--model", s(&model), "--data", s(&fx.data), "--rmse"]);
    assert!(msg.contains("rating model"), "{msg}");

    let out = ok(&["recommend", "--model", s(&model), "--data", s(&fx.data), "--user", "2", "--n", "3"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rank\titem_id");
    assert_eq!(lines.len(), 4);
    let msg = err(&["recommend", "--model", s(&model), "--data", s(&fx.data), "--user", "99", "--n", "3"]);
    assert!(msg.contains("99"), "{msg}");
}

#[test]
fn training_is_byte_reproducible() {
    let fx = prepared_100k();
    let cfg = write_config(&fx.root, "c.json", r#"{"hidden_dim": 3, "epochs": 4}"#);
    let paths: Vec<PathBuf> = ["m1.json", "m2.json"].iter().map(|n| fx.root.join(n)).collect();
    for p in &paths {
        ok(&["train", "--data", s(&fx.data), "--task", "rating", "--config", s(&cfg), "--out", s(p)]);
    }
    assert_eq!(fs::read(&paths[0]).unwrap(), fs::read(&paths[1]).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.root.join("m1.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_are_reported() {
    let fx = prepared_100k();
    let out = fx.root.join("m.json");
    let bad = write_config(&fx.root, "bad.json", r#"{"hidden_activation": "softmax"}"#);
    let msg = err(&["train", "--data", s(&fx.data), "--task", "rating", "--config", s(&bad), "--out", s(&out)]);
    for name in ["identity", "sigmoid", "relu", "tanh"] {
        assert!(msg.contains(name), "{msg}");
    }
    let typo = write_config(&fx.root, "typo.json", r#"{"hiden_dim": 5}"#);
    let msg = err(&["train", "--data", s(&fx.data), "--task", "rating", "--config", s(&typo), "--out", s(&out)]);
    assert!(msg.contains("hiden_dim"), "{msg}");
    let zero = write_config(&fx.root, "zero.json", r#"{"epochs": 0}"#);
    err(&["train", "--data", s(&fx.data), "--task", "ranking", "--config", s(&zero), "--out", s(&out)]);
    assert!(!out.exists());
}

#[test]
fn ml1m_layout_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    fs::create_dir(&raw).unwrap();
    write_ml1m(&raw);
    let data = tmp.path().join("p.json");
    let out = ok(&["prepare", "--raw", s(&raw), "--format", "ml-1m", "--out", s(&data)]);
    assert_eq!(out.trim(), "M=5 N=7 |Ω|=20 K_user=30 K_item=19");
    let cfg = write_config(tmp.path(), "c.json", r#"{"hidden_dim": 4, "epochs": 3}"#);
    let model = tmp.path().join("m.json");
    ok(&["train", "--data", s(&data), "--task", "rating", "--config", s(&cfg), "--out", s(&model)]);
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["evaluate", "--model", s(&model), "--data", s(&data), "--rmse"])).unwrap();
    assert!(report["rmse"].as_f64().unwrap().is_finite());
}

#[test]
fn bad_arguments_exit_nonzero() {
    err(&["reproduce", "--table", "3", "--raw", "x"]);
    err(&["train", "--task", "clustering", "--data", "x", "--out", "y"]);
    let msg = err(&["evaluate", "--model", "/nonexistent/model.json", "--data", "x"]);
    assert!(msg.contains("/nonexistent/model.json"), "{msg}");
}
