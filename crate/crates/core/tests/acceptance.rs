//! Acceptance criteria, one test per criterion. Each prints a single
//! `PASS`/`FAIL` line followed by the individual measurements.

use std::time::{Duration, Instant};

use rankq::experiments::{
    AnnulusExperiment, Check, CollisionExperiment, DistortionExperiment, ExperimentReport, GoodCutExperiment,
    HierScalingExperiment, HierSuccessExperiment, InvariantExperiment, PopularityExperiment, RshRetrievalExperiment,
    StarExperiment,
};

fn run(id: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> rankq::Result<ExperimentReport>) {
    let start = Instant::now();
    let report = f().unwrap_or_else(|e| panic!("criterion {id} ({title}) errored: {e}"));
    let elapsed = start.elapsed();
    let mut checks = report.checks.clone();
    if let Some(limit) = limit {
        checks.push(Check::at_most("runtime seconds", elapsed.as_secs_f64(), limit.as_secs_f64()));
    }
    assert!(report.aggregates_consistent());
    let pass = checks.iter().all(|c| c.pass);
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {verdict}: {title} [{:.1}s]", elapsed.as_secs_f64());
    for c in &checks {
        println!("    {c}");
    }
    if report.data != serde_json::Value::Null {
        println!("    data: {}", compact(&report.data));
    }
    assert!(pass, "criterion {id} failed");
}

fn compact(v: &serde_json::Value) -> String {
    let s = v.to_string();
    if s.len() > 600 {
        format!("{}...", &s[..600])
    } else {
        s
    }
}

#[test]
fn criterion_01_distortion_curves() {
    run(1, "rank-distortion curves on torus n=400", Some(Duration::from_secs(60)), || {
        DistortionExperiment::default().run()
    });
}

#[test]
fn criterion_02_hierarchical_success() {
    run(2, "hierarchical index nearest-neighbor success", Some(Duration::from_secs(120)), || {
        HierSuccessExperiment::default().run()
    });
}

#[test]
fn criterion_03_hierarchical_scaling() {
    run(3, "hierarchical search question scaling", None, || HierScalingExperiment::default().run());
}

#[test]
fn criterion_04_annulus_search() {
    run(4, "annulus search success and question budget", None, || AnnulusExperiment::default().run());
}

#[test]
fn criterion_05_star_disorder() {
    run(5, "star-graph disorder constant", None, || StarExperiment::default().run());
}

#[test]
fn criterion_06_collision_law() {
    run(6, "rank-sensitive hash collision law", None, || CollisionExperiment::default().run());
}

#[test]
fn criterion_07_rsh_retrieval() {
    run(7, "rank-sensitive hashing retrieval", None, || RshRetrievalExperiment::default().run());
}

#[test]
fn criterion_08_good_cut_formula() {
    run(8, "good-cut formula against its counting model", None, || GoodCutExperiment::default().run());
}

#[test]
fn criterion_09_popularity() {
    run(9, "popularity counts against membership probability", None, || PopularityExperiment::default().run());
}

#[test]
fn criterion_10_invariants() {
    run(10, "invariant suites", None, || InvariantExperiment::default().run());
}
