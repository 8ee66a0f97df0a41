use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rankq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankq")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {:?}", out))
}

/// Data rows of a CSV written by the tool: comment lines and the header skipped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = rankq(dir.path(), &["gen", "--kind", "torus", "--n", "1000", "--d", "2", "--seed", "7", "--out", "t.bin"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v = stdout_json(&out);
    assert_eq!(v["n"], 1000);
    assert_eq!(v["seed"], 7);
    assert!(v["invocation"].as_array().unwrap().iter().any(|a| a == "gen"));
    let ds = rankq::Dataset::<f64>::load(dir.path().join("t.bin")).unwrap();
    assert_eq!(ds.space, rankq::HiddenSpace::torus(1000, 2, 7).unwrap());
}

#[test]
fn star_dataset_keeps_its_query() {
    let dir = tempfile::tempdir().unwrap();
    let out = rankq(dir.path(), &["gen", "--kind", "star", "--alpha", "3", "--spb", "2", "--out", "s.bin"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(stdout_json(&out)["queries"], 1);
    let out = rankq(dir.path(), &["disorder", "--in", "s.bin", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(stdout_json(&out)["with_query"], true);
}

#[test]
fn disorder_above_the_cap_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = rankq(dir.path(), &["gen", "--kind", "torus", "--n", "4096", "--out", "big.bin"]);
    assert_eq!(out.status.code(), Some(0));
    let out = rankq(dir.path(), &["disorder", "--in", "big.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2048"));
}

#[test]
fn bad_arguments_exit_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rankq(dir.path(), &["gen", "--kind", "cube", "--out", "x"]).status.code(), Some(2));
    assert_eq!(rankq(dir.path(), &["ranks", "--in", "missing.bin", "--out", "r.csv"]).status.code(), Some(2));
    assert_eq!(rankq(dir.path(), &["bench", "annulus"]).status.code(), Some(2));
}

#[test]
fn distortion_bench_curve_is_recomputable_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    rankq(dir.path(), &["gen", "--kind", "line", "--n", "200", "--seed", "1", "--out", "l.bin"]);
    let out = rankq(
        dir.path(),
        &["bench", "distortion", "--in", "l.bin", "--anchors", "200", "--out", "curve.csv", "--pairs", "pairs.csv"],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let summary = stdout_json(&out);

    let mut by_rank: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in rows(&dir.path().join("pairs.csv")) {
        by_rank.entry(r[2].parse().unwrap()).or_default().push(r[3].parse().unwrap());
    }
    let curve = rows(&dir.path().join("curve.csv"));
    assert_eq!(curve.len(), by_rank.len());
    let mut means = Vec::new();
    for (row, (rank, l1s)) in curve.iter().zip(&by_rank) {
        assert_eq!(row[0].parse::<u32>().unwrap(), *rank);
        let mean = l1s.iter().sum::<f64>() / l1s.len() as f64;
        assert!((row[1].parse::<f64>().unwrap() - mean).abs() <= 1e-9 * mean.max(1.0));
        means.push(mean);
    }
    let smoothed: Vec<f64> = (0..means.len())
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(2), (i + 3).min(means.len()));
            means[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let drops = smoothed.windows(2).filter(|w| w[1] < w[0]).count();
    assert_eq!(summary["smoothed_decreases"], drops);
    assert_eq!(drops, 0, "smoothed curve decreases {drops} times");
}

#[test]
fn oracle_workflow_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = rankq(dir.path(), args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {out:?}");
        stdout_json(&out)
    };
    run(&["gen", "--kind", "torus", "--n", "150", "--seed", "2", "--out", "t.bin"]);
    run(&["build-hier", "--in", "t.bin", "--seed", "1", "--attempts", "5", "--out", "h.bin"]);
    let hits = run(&["query-hier", "--in", "t.bin", "--index", "h.bin", "--queries", "5", "--verify"]);
    for h in hits["results"].as_array().unwrap() {
        assert!(h["rank"].as_u64().unwrap() >= 1);
        assert!(h["questions"].as_u64().unwrap() > 0);
    }
    let blind = run(&["query-hier", "--in", "t.bin", "--index", "h.bin", "--query", "0.25,0.75"]);
    assert!(blind["results"][0].get("rank").is_none());

    run(&["annulus", "learn", "--in", "t.bin", "--m", "12", "--out", "a.bin"]);
    let ann = run(&["annulus", "search", "--in", "t.bin", "--index", "a.bin", "--r", "8", "--disorder", "6", "--verify"]);
    assert!(ann["results"][0]["success"].is_boolean());

    run(&["rsh", "build", "--in", "t.bin", "--r", "8", "--bits", "7", "--tables", "6", "--out", "r.bin"]);
    let rsh = run(&["rsh", "query", "--in", "t.bin", "--index", "r.bin", "--queries", "3", "--verify"]);
    assert_eq!(rsh["results"].as_array().unwrap().len(), 3);

    let tree = run(&["tree", "--in", "t.bin", "--seed", "4", "--out", "tree.json"]);
    assert_eq!(tree["leaves"], 150);

    run(&["popularity", "--in", "t.bin", "--cuts", "50", "--exact", "--out", "pop.csv"]);
    let pop = rows(&dir.path().join("pop.csv"));
    assert_eq!(pop.len(), 150);
    assert!(pop.iter().all(|r| r.len() == 3 && !r[2].is_empty()));
}

#[test]
fn rejected_parameterization_exits_one_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    rankq(dir.path(), &["gen", "--kind", "torus", "--n", "100", "--d", "2", "--out", "t.bin"]);
    let out = rankq(dir.path(), &["rsh", "build", "--in", "t.bin", "--r", "5", "--epsilon", "0.1", "--out", "r.bin"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    assert_eq!(stdout_json(&out)["error"], "parameterization");
}

const SMALL_SUITE: &str = r#"
[suite]
name = "small"

[[experiment]]
kind = "good_cut"
n = 1000

[[experiment]]
kind = "popularity"
n = 40
cuts = 500
exhaustive_n = 12
"#;

fn strip_invocation(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("invocation");
    }
    v
}

#[test]
fn suite_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL_SUITE).unwrap();
    for out_dir in ["a", "b"] {
        let out = rankq(dir.path(), &["suite", "--config", "small.toml", "--out-dir", out_dir, "--verify"]);
        assert_eq!(out.status.code(), Some(0), "{out:?}");
    }
    for file in ["01_good_cut.json", "02_popularity.json", "summary.json"] {
        let load = |d: &str| -> Value {
            strip_invocation(serde_json::from_str(&std::fs::read_to_string(dir.path().join(d).join(file)).unwrap()).unwrap())
        };
        assert_eq!(load("a"), load("b"), "{file} differs between runs");
    }
}

#[test]
fn malformed_suite_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[[experiment]]\nkind = \"popularity\"\ncolour = 3\n").unwrap();
    let out = rankq(dir.path(), &["suite", "--config", "bad.toml", "--out-dir", "o", "--verify"]);
    assert_eq!(out.status.code(), Some(2));
}
