//! Experiment drivers shared by the command line and the acceptance suite.
//!
//! Every driver runs on generated data with a fixed seed schedule and
//! returns an [`ExperimentReport`] whose aggregates can be recomputed from
//! its per-trial records. Drivers read ground truth to score results, so
//! every report is marked as verified.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annulus::{search_annulus, AnnulusIndex, AnnulusParams};
use crate::bintree::{
    build_tree, cut_with_anchors, good_cut_count, good_cut_probability, phi_exact, phi_exhaustive,
    popularity_scores, AnchorDraw, BinTree,
};
use crate::error::{invalid, Error, Result};
use crate::hier::{BuildConfig, HierIndex};
use crate::oracle::{insertion_bound, OracleSession, Point};
use crate::ranks::{
    annulus_bounds, compute_rank_matrix, diameter, disorder_constant, distortion_fit, rho_l1_column,
    satisfies_triangle_inequalities, QueryRanks, RankMatrix, RankMode,
};
use crate::rsh::{collision_prob_exact, derive_params, object_column, HashSpec, RshParams, RshTableSet};
use crate::scalar::{display_exact, Exact};
use crate::space::{HiddenSpace, QueryPoint};
use crate::star::make_star_graph;

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// Build seed, dataset size or other grouping key for the trial.
    pub group: u64,
    pub questions: u64,
    pub success: bool,
    pub returned_rank: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub trials: usize,
    pub mean_questions: f64,
    /// Population standard deviation.
    pub std_questions: f64,
    pub success_rate: f64,
}

impl Aggregates {
    pub fn from_trials(trials: &[TrialRecord]) -> Self {
        let k = trials.len();
        if k == 0 {
            return Aggregates { trials: 0, mean_questions: 0.0, std_questions: 0.0, success_rate: 0.0 };
        }
        let mean = trials.iter().map(|t| t.questions as f64).sum::<f64>() / k as f64;
        let var = trials.iter().map(|t| (t.questions as f64 - mean).powi(2)).sum::<f64>() / k as f64;
        let ok = trials.iter().filter(|t| t.success).count();
        Aggregates { trials: k, mean_questions: mean, std_questions: var.sqrt(), success_rate: ok as f64 / k as f64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    Equal,
}

/// One thresholded measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(label: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check { label: label.into(), measured, comparison: Comparison::AtMost, threshold, pass: measured <= threshold }
    }

    pub fn at_least(label: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check { label: label.into(), measured, comparison: Comparison::AtLeast, threshold, pass: measured >= threshold }
    }

    /// Holds when `ok` is true; `measured` counts violations.
    pub fn holds(label: impl Into<String>, violations: u64) -> Self {
        Check {
            label: label.into(),
            measured: violations as f64,
            comparison: Comparison::Equal,
            threshold: 0.0,
            pass: violations == 0,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
            Comparison::Equal => "==",
        };
        let verdict = if self.pass { "ok" } else { "FAILED" };
        write!(f, "{}: {} {} {} ({verdict})", self.label, fmt_num(self.measured), op, fmt_num(self.threshold))
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub params: Value,
    pub trials: Vec<TrialRecord>,
    pub aggregates: Aggregates,
    pub checks: Vec<Check>,
    /// Supporting measurements (curves, per-size tables, fitted constants).
    pub data: Value,
    /// Ground truth was consulted.
    pub verified: bool,
}

impl ExperimentReport {
    fn new(name: &str, params: impl Serialize, trials: Vec<TrialRecord>) -> Self {
        ExperimentReport {
            name: name.to_string(),
            params: serde_json::to_value(params).expect("params serialize"),
            aggregates: Aggregates::from_trials(&trials),
            trials,
            checks: Vec::new(),
            data: Value::Null,
            verified: true,
        }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Whether the stored aggregates match the per-trial records.
    pub fn aggregates_consistent(&self) -> bool {
        Aggregates::from_trials(&self.trials) == self.aggregates
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from("seed,group,questions,success,returned_rank\n");
        for t in &self.trials {
            let rank = t.returned_rank.map(|r| r.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", t.seed, t.group, t.questions, t.success, rank));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Curve helpers

/// Centered moving average; the window shrinks at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Number of positions where the sequence decreases.
pub fn monotone_violations(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

/// Coefficient of determination of the least-squares line through the
/// points. Returns 1 for a constant response.
pub fn linear_r2(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

fn log2(n: usize) -> f64 {
    (n as f64).log2()
}

fn torus(n: usize, d: usize, seed: u64) -> Result<HiddenSpace<f64>> {
    HiddenSpace::torus(n, d, seed)
}

fn direct_ranks(space: &HiddenSpace<f64>) -> Result<RankMatrix> {
    compute_rank_matrix(&OracleSession::new(space), RankMode::Direct)
}

fn queries(space: &HiddenSpace<f64>, count: usize, seed: u64) -> Result<Vec<(u64, QueryPoint<f64>)>> {
    (0..count as u64)
        .map(|k| {
            let s = seed.wrapping_add(k);
            Ok((s, space.random_query(&mut ChaCha8Rng::seed_from_u64(s))?))
        })
        .collect()
}

fn rank_of(space: &HiddenSpace<f64>, q: &QueryPoint<f64>, o: usize) -> Result<u32> {
    Ok(QueryRanks::to_objects_only(&space.ground_truth()?, q)?[o])
}

// ---------------------------------------------------------------------------
// Experiment parameters

/// Rank-distortion curves on random tori.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionExperiment {
    pub n: usize,
    pub dims: Vec<usize>,
    pub anchors: usize,
    pub seed: u64,
}

impl Default for DistortionExperiment {
    fn default() -> Self {
        DistortionExperiment { n: 400, dims: vec![1, 2, 4], anchors: 50, seed: 1 }
    }
}

/// Nearest-neighbor success of the hierarchical index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierSuccessExperiment {
    pub n: usize,
    pub d: usize,
    pub a: f64,
    pub build_seeds: Vec<u64>,
    pub queries: usize,
    pub data_seed: u64,
    pub query_seed: u64,
    pub build_attempts: usize,
}

impl Default for HierSuccessExperiment {
    fn default() -> Self {
        HierSuccessExperiment {
            n: 512,
            d: 2,
            a: 2.0,
            build_seeds: (1..=20).collect(),
            queries: 200,
            data_seed: 2,
            query_seed: 10_000,
            build_attempts: 5,
        }
    }
}

/// Search question counts of the hierarchical index across sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierScalingExperiment {
    pub sizes: Vec<usize>,
    pub d: usize,
    pub a: f64,
    pub build_seeds: Vec<u64>,
    pub queries: usize,
    pub data_seed: u64,
    pub query_seed: u64,
}

impl Default for HierScalingExperiment {
    fn default() -> Self {
        HierScalingExperiment {
            sizes: vec![128, 256, 512, 1024],
            d: 2,
            a: 2.0,
            build_seeds: vec![1, 2, 3],
            queries: 100,
            data_seed: 3,
            query_seed: 20_000,
        }
    }
}

/// Annulus sampling search with the exact disorder constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnulusExperiment {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Target rank; `None` means `ceil(n / 20)`.
    pub r: Option<usize>,
    pub trials: usize,
    pub budget_multiplier: f64,
    pub data_seed: u64,
    pub seed: u64,
}

impl Default for AnnulusExperiment {
    fn default() -> Self {
        AnnulusExperiment {
            n: 256,
            d: 1,
            m: 16,
            r: None,
            trials: 200,
            budget_multiplier: AnnulusParams::DEFAULT_MULTIPLIER,
            data_seed: 4,
            seed: 30_000,
        }
    }
}

/// Brute-force disorder of star graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarExperiment {
    pub alpha: usize,
    pub supernodes_per_branch: usize,
    pub seeds: Vec<u64>,
}

impl Default for StarExperiment {
    fn default() -> Self {
        StarExperiment { alpha: 4, supernodes_per_branch: 4, seeds: (1..=5).collect() }
    }
}

/// Rank-sensitive hash collision law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionExperiment {
    pub exhaustive_n: usize,
    /// External queries also checked exhaustively.
    pub exhaustive_queries: usize,
    pub sampled_n: usize,
    pub specs: usize,
    pub pairs: usize,
    pub d: usize,
    pub seed: u64,
}

impl Default for CollisionExperiment {
    fn default() -> Self {
        CollisionExperiment {
            exhaustive_n: 30,
            exhaustive_queries: 10,
            sampled_n: 100,
            specs: 20_000,
            pairs: 20,
            d: 2,
            seed: 5,
        }
    }
}

/// Approximate retrieval with amplified hash tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RshRetrievalExperiment {
    pub n: usize,
    pub d: usize,
    /// Near radius; `None` means `n / 20`.
    pub r: Option<usize>,
    pub epsilon: f64,
    pub queries: usize,
    pub anchors: usize,
    /// Table shape used when the linear-fit parameterization is rejected.
    pub bits: usize,
    pub tables: usize,
    pub data_seed: u64,
    pub table_seed: u64,
    pub query_seed: u64,
}

impl Default for RshRetrievalExperiment {
    fn default() -> Self {
        RshRetrievalExperiment {
            n: 400,
            d: 1,
            r: None,
            epsilon: 1.0,
            queries: 200,
            anchors: 50,
            bits: 9,
            tables: 8,
            data_seed: 6,
            table_seed: 7,
            query_seed: 40_000,
        }
    }
}

/// Good-cut formula against its counting model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodCutExperiment {
    pub disorders: Vec<f64>,
    /// `epsilon = 1 - t / (8 D)` for each `t`.
    pub offsets: Vec<f64>,
    pub n: usize,
}

impl Default for GoodCutExperiment {
    fn default() -> Self {
        GoodCutExperiment { disorders: vec![1.0, 2.0, 4.0], offsets: vec![0.0, 0.5, 1.0], n: 10_000 }
    }
}

/// Monte Carlo popularity against the exact membership probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopularityExperiment {
    pub n: usize,
    pub d: usize,
    pub cuts: usize,
    pub exhaustive_n: usize,
    pub seed: u64,
}

impl Default for PopularityExperiment {
    fn default() -> Self {
        PopularityExperiment { n: 100, d: 2, cuts: 4000, exhaustive_n: 30, seed: 8 }
    }
}

/// Exhaustive invariant checks on small spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantExperiment {
    pub oracle_n: usize,
    pub oracle_questions: usize,
    pub annulus_n: usize,
    pub annulus_radii: Vec<u64>,
    pub cut_n: usize,
    pub tree_n: usize,
    pub tree_seeds: usize,
    pub seed: u64,
}

impl Default for InvariantExperiment {
    fn default() -> Self {
        InvariantExperiment {
            oracle_n: 64,
            oracle_questions: 20_000,
            annulus_n: 128,
            annulus_radii: vec![1, 2, 4, 8, 16],
            cut_n: 128,
            tree_n: 256,
            tree_seeds: 50,
            seed: 9,
        }
    }
}

/// One configured experiment, tagged by `kind` in suite files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Distortion(DistortionExperiment),
    HierSuccess(HierSuccessExperiment),
    HierScaling(HierScalingExperiment),
    Annulus(AnnulusExperiment),
    StarDisorder(StarExperiment),
    RshCollision(CollisionExperiment),
    RshRetrieval(RshRetrievalExperiment),
    GoodCut(GoodCutExperiment),
    Popularity(PopularityExperiment),
    Invariants(InvariantExperiment),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Distortion(_) => "distortion",
            Experiment::HierSuccess(_) => "hier_success",
            Experiment::HierScaling(_) => "hier_scaling",
            Experiment::Annulus(_) => "annulus",
            Experiment::StarDisorder(_) => "star_disorder",
            Experiment::RshCollision(_) => "rsh_collision",
            Experiment::RshRetrieval(_) => "rsh_retrieval",
            Experiment::GoodCut(_) => "good_cut",
            Experiment::Popularity(_) => "popularity",
            Experiment::Invariants(_) => "invariants",
        }
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        match self {
            Experiment::Distortion(e) => e.run(),
            Experiment::HierSuccess(e) => e.run(),
            Experiment::HierScaling(e) => e.run(),
            Experiment::Annulus(e) => e.run(),
            Experiment::StarDisorder(e) => e.run(),
            Experiment::RshCollision(e) => e.run(),
            Experiment::RshRetrieval(e) => e.run(),
            Experiment::GoodCut(e) => e.run(),
            Experiment::Popularity(e) => e.run(),
            Experiment::Invariants(e) => e.run(),
        }
    }

    /// The full acceptance schedule, in criterion order.
    pub fn acceptance_suite() -> Vec<Experiment> {
        vec![
            Experiment::Distortion(Default::default()),
            Experiment::HierSuccess(Default::default()),
            Experiment::HierScaling(Default::default()),
            Experiment::Annulus(Default::default()),
            Experiment::StarDisorder(Default::default()),
            Experiment::RshCollision(Default::default()),
            Experiment::RshRetrieval(Default::default()),
            Experiment::GoodCut(Default::default()),
            Experiment::Popularity(Default::default()),
            Experiment::Invariants(Default::default()),
        ]
    }
}

// ---------------------------------------------------------------------------
// Drivers

/// Smoothing window for distortion curves.
pub const SMOOTHING_WINDOW: usize = 5;
pub const MIN_LINEAR_R2: f64 = 0.95;

impl DistortionExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("distortion", self, Vec::new());
        let mut curves = Vec::new();
        for (k, &d) in self.dims.iter().enumerate() {
            let space = torus(self.n, d, self.seed.wrapping_add(k as u64))?;
            let rm = direct_ranks(&space)?;
            let fit = distortion_fit(&rm, self.anchors, self.seed)?;
            let ranks: Vec<f64> = fit.curve.iter().map(|b| b.rank as f64).collect();
            let means: Vec<f64> = fit.curve.iter().map(|b| b.mean_l1).collect();
            let smoothed = smooth(&means, SMOOTHING_WINDOW);
            let drops = monotone_violations(&smoothed);
            report.checks.push(Check::holds(format!("d={d}: decreases in smoothed curve"), drops as u64));
            let lo = self.n as f64 / 10.0;
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                ranks.iter().zip(&means).filter(|(&r, _)| r >= lo && r <= self.n as f64).unzip();
            let r2 = linear_r2(&xs, &ys);
            if d == 1 {
                report.checks.push(Check::at_least("d=1: linear fit R^2 on [n/10, n]", r2, MIN_LINEAR_R2));
            }
            curves.push(json!({
                "d": d,
                "c": display_exact(&fit.c),
                "gamma": display_exact(&fit.gamma),
                "r2": r2,
                "smoothed_decreases": drops,
                "ranks": ranks,
                "mean_l1": means,
                "smoothed": smoothed,
            }));
        }
        report.data = json!({ "curves": curves });
        Ok(report)
    }
}

pub const MIN_HIER_SUCCESS: f64 = 0.95;

impl HierSuccessExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let space = torus(self.n, self.d, self.data_seed)?;
        let rm = direct_ranks(&space)?;
        let dr = disorder_constant(&rm)?;
        let qs = queries(&space, self.queries, self.query_seed)?;
        let truth: Vec<Vec<u32>> = qs
            .iter()
            .map(|(_, q)| QueryRanks::to_objects_only(&space.ground_truth()?, q))
            .collect::<Result<_>>()?;
        let session = OracleSession::new(&space);
        let mut trials = Vec::new();
        let mut failures = 0u64;
        let mut builds = Vec::new();
        for &b in &self.build_seeds {
            let cfg = BuildConfig::from_disorder(&dr, self.a, b)?;
            let (idx, attempts) = HierIndex::build_with_retry(&session, cfg, self.build_attempts)?;
            builds.push(json!({
                "seed": b,
                "attempts": attempts,
                "build_questions": idx.stats().questions,
                "levels": idx.levels(),
                "kappa": idx.kappa(),
            }));
            let rows: Vec<(TrialRecord, bool)> = qs
                .par_iter()
                .zip(&truth)
                .map(|((qseed, q), rq)| {
                    let s = session.with_query(q)?;
                    Ok(match idx.search(&s) {
                        Ok(hit) => {
                            let rank = rq[hit.nearest];
                            let t = TrialRecord {
                                seed: *qseed,
                                group: b,
                                questions: hit.questions,
                                success: rank == 1,
                                returned_rank: Some(rank),
                            };
                            (t, false)
                        }
                        Err(Error::SearchFailure { .. }) => {
                            let t = TrialRecord { seed: *qseed, group: b, questions: 0, success: false, returned_rank: None };
                            (t, true)
                        }
                        Err(e) => return Err(e),
                    })
                })
                .collect::<Result<_>>()?;
            for (t, failed) in rows {
                failures += failed as u64;
                trials.push(t);
            }
        }
        let mut report = ExperimentReport::new("hier_success", self, trials);
        report.checks.push(Check::at_least("nearest-neighbor success rate", report.aggregates.success_rate, MIN_HIER_SUCCESS));
        report.checks.push(Check::holds("search failures", failures));
        report.data = json!({
            "disorder": display_exact(&dr.d),
            "disorder_f64": dr.d_f64(),
            "layout": BuildConfig::from_disorder(&dr, self.a, 0)?.layout(self.n).sample_sizes,
            "builds": builds,
        });
        Ok(report)
    }
}

pub const MAX_SCALING_SPREAD: f64 = 3.0;

impl HierScalingExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let mut trials = Vec::new();
        let mut table = Vec::new();
        for (k, &n) in self.sizes.iter().enumerate() {
            let space = torus(n, self.d, self.data_seed.wrapping_add(k as u64))?;
            let rm = direct_ranks(&space)?;
            let dr = disorder_constant(&rm)?;
            let qs = queries(&space, self.queries, self.query_seed)?;
            let session = OracleSession::new(&space);
            let mut sum = 0u64;
            let mut count = 0u64;
            for &b in &self.build_seeds {
                let cfg = BuildConfig::from_disorder(&dr, self.a, b)?;
                let (idx, _) = HierIndex::build_with_retry(&session, cfg, 5)?;
                for (qseed, q) in &qs {
                    let s = session.with_query(q)?;
                    let (questions, rank) = match idx.search(&s) {
                        Ok(hit) => (hit.questions, Some(rank_of(&space, q, hit.nearest)?)),
                        Err(Error::SearchFailure { .. }) => (s.ledger().total(), None),
                        Err(e) => return Err(e),
                    };
                    sum += questions;
                    count += 1;
                    trials.push(TrialRecord {
                        seed: *qseed,
                        group: n as u64,
                        questions,
                        success: rank == Some(1),
                        returned_rank: rank,
                    });
                }
            }
            let mean = sum as f64 / count.max(1) as f64;
            let cfg = BuildConfig::from_disorder(&dr, self.a, 0)?;
            table.push(json!({
                "n": n,
                "disorder": dr.d_f64(),
                "sample_sizes": cfg.layout(n).sample_sizes,
                "kappa": cfg.kappa(n),
                "mean_questions": mean,
                "per_log2_squared": mean / log2(n).powi(2),
                "per_n": mean / n as f64,
            }));
        }
        let ratios: Vec<f64> = table.iter().map(|r| r["per_log2_squared"].as_f64().unwrap()).collect();
        let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) / ratios.iter().cloned().fold(f64::MAX, f64::min);
        let mut report = ExperimentReport::new("hier_scaling", self, trials);
        report.checks.push(Check::at_most("spread of mean questions / log2(n)^2", spread, MAX_SCALING_SPREAD));
        if let Some((&n, row)) = self.sizes.iter().zip(&table).max_by_key(|(n, _)| **n) {
            report.checks.push(Check::at_most(
                format!("mean questions at n={n}"),
                row["mean_questions"].as_f64().unwrap(),
                n as f64 / 2.0,
            ));
        }
        report.data = json!({ "sizes": table });
        Ok(report)
    }
}

pub const MIN_ANNULUS_SUCCESS: f64 = 0.5;

impl AnnulusExperiment {
    pub fn target_rank(&self) -> usize {
        self.r.unwrap_or(self.n.div_ceil(20))
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let space = torus(self.n, self.d, self.data_seed)?;
        let rm = direct_ranks(&space)?;
        let dr = disorder_constant(&rm)?;
        let d = dr.d_f64();
        let r = self.target_rank();
        let session = OracleSession::new(&space);
        let mut trials = Vec::with_capacity(self.trials);
        let mut fallbacks = 0;
        let mut learn_total = 0u64;
        for k in 0..self.trials as u64 {
            let seed = self.seed.wrapping_add(k);
            let idx = AnnulusIndex::learn(&session, self.m, seed)?;
            learn_total += idx.learn_questions();
            let q = space.random_query(&mut ChaCha8Rng::seed_from_u64(seed))?;
            let s = session.with_query(&q)?;
            let params = AnnulusParams { r, d, budget_multiplier: self.budget_multiplier, seed };
            let trace = idx.search(&s, &params)?;
            fallbacks += trace.fallback as u64;
            let rank = rank_of(&space, &q, trace.result)?;
            trials.push(TrialRecord {
                seed,
                group: 0,
                questions: trace.questions,
                success: rank as usize <= r,
                returned_rank: Some(rank),
            });
        }
        let n = self.n as f64;
        let m = self.m as f64;
        let budget = 2.0 * (m + n.log2() + d + d * d * n / (m * r as f64) + 1.0);
        let mut report = ExperimentReport::new("annulus", self, trials);
        report.checks.push(Check::at_least("success rate (rank <= R)", report.aggregates.success_rate, MIN_ANNULUS_SUCCESS));
        report.checks.push(Check::at_most("mean search questions", report.aggregates.mean_questions, budget));
        report.data = json!({
            "disorder": display_exact(&dr.d),
            "r": r,
            "question_budget": budget,
            "fallbacks": fallbacks,
            "mean_learn_questions": learn_total as f64 / self.trials.max(1) as f64,
        });
        Ok(report)
    }
}

impl StarExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let alpha = self.alpha as f64;
        let (lo, hi) = (alpha / 8.0, 8.0 * alpha);
        let mut report = ExperimentReport::new("star_disorder", self, Vec::new());
        let mut rows = Vec::new();
        for &seed in &self.seeds {
            let star = make_star_graph::<f64>(self.alpha, self.supernodes_per_branch, seed)?;
            let rm = direct_ranks(&star.space)?;
            let base = disorder_constant(&rm)?;
            let qr = QueryRanks::compute(&star.space.ground_truth()?, &star.query)?;
            let with_query = disorder_constant(&rm.augmented(&qr))?;
            let dq = with_query.d_f64();
            report.checks.push(Check::at_least(format!("seed {seed}: D with query"), dq, lo));
            report.checks.push(Check::at_most(format!("seed {seed}: D with query"), dq, hi));
            rows.push(json!({
                "seed": seed,
                "disorder_database": display_exact(&base.d),
                "disorder_with_query": display_exact(&with_query.d),
                "binding": with_query.binding(),
                "direct_neighbors": star.direct_neighbors,
            }));
        }
        report.data = json!({ "n": self.alpha * self.alpha * self.supernodes_per_branch, "seeds": rows });
        Ok(report)
    }
}

pub const COLLISION_TOLERANCE: f64 = 0.02;

/// Number of with-replacement anchor pairs `(x1, x2)` on which `u` and the
/// session's point `q` hash alike, counted by asking the oracle.
fn agreement_count(s: &OracleSession<'_, f64>, u: Point, q: Point) -> Result<u64> {
    let n = s.n();
    let mut agree = 0;
    for x1 in 0..n {
        for x2 in 0..n {
            let (a, b) = (Point::Object(x1), Point::Object(x2));
            agree += ((s.ask(a, b, u)? == b) == (s.ask(a, b, q)? == b)) as u64;
        }
    }
    Ok(agree)
}

impl CollisionExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("rsh_collision", self, Vec::new());

        let n = self.exhaustive_n;
        let space = torus(n, self.d, self.seed)?;
        let rm = direct_ranks(&space)?;
        let session = OracleSession::new(&space);
        let nn = (n * n) as u64;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (0..n).map(move |q| (u, q))).collect();
        let object_mismatch: u64 = pairs
            .par_iter()
            .map(|&(u, q)| {
                let agree = agreement_count(&session, Point::Object(u), Point::Object(q))?;
                let col = object_column(&rm, q);
                let formula = collision_prob_exact(&rm, u, &col);
                let l1 = rho_l1_column(&rm, u, &col);
                Ok::<_, Error>((agree != nn - l1 || formula != 1.0 - l1 as f64 / nn as f64) as u64)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        report.checks.push(Check::holds(format!("n={n}: object pairs with count != n^2 - l1"), object_mismatch));

        let mut query_mismatch = 0;
        let gt = space.ground_truth()?;
        for (_, q) in queries(&space, self.exhaustive_queries, self.seed.wrapping_mul(31))? {
            let s = session.with_query(&q)?;
            let col = QueryRanks::compute(&gt, &q)?.column();
            for u in 0..n {
                let agree = agreement_count(&s, Point::Object(u), Point::Query)?;
                query_mismatch += (agree != nn - rho_l1_column(&rm, u, &col)) as u64;
            }
        }
        report.checks.push(Check::holds(format!("n={n}: external queries with count != n^2 - l1"), query_mismatch));

        let n = self.sampled_n;
        let space = torus(n, self.d, self.seed.wrapping_add(1))?;
        let rm = direct_ranks(&space)?;
        let session = OracleSession::new(&space);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let specs: Vec<HashSpec> = (0..self.specs).map(|_| HashSpec::random(&mut rng, n)).collect();
        let mut worst = 0f64;
        let mut rows = Vec::new();
        for _ in 0..self.pairs {
            let u = rng.gen_range(0..n);
            let q = rng.gen_range(0..n);
            let mut agree = 0usize;
            for spec in &specs {
                let (a, b) = (Point::Object(spec.x1), Point::Object(spec.x2));
                agree += ((session.ask(a, b, Point::Object(u))? == b) == (session.ask(a, b, Point::Object(q))? == b)) as usize;
            }
            let freq = agree as f64 / specs.len() as f64;
            let exact = collision_prob_exact(&rm, u, &object_column(&rm, q));
            worst = worst.max((freq - exact).abs());
            rows.push(json!({ "u": u, "q": q, "frequency": freq, "exact": exact }));
        }
        report.checks.push(Check::at_most(
            format!("n={n}: max |sampled - exact| collision"),
            worst,
            COLLISION_TOLERANCE,
        ));
        report.data = json!({ "sampled_pairs": rows });
        Ok(report)
    }
}

pub const MIN_RSH_SUCCESS: f64 = 0.5;

impl RshRetrievalExperiment {
    pub fn near_rank(&self) -> usize {
        self.r.unwrap_or(self.n / 20).max(1)
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let space = torus(self.n, self.d, self.data_seed)?;
        let rm = direct_ranks(&space)?;
        let r = self.near_rank();
        let fit = distortion_fit(&rm, self.anchors, self.data_seed)?;
        let (params, derived) = match derive_params(self.n, r, self.epsilon, &fit) {
            Ok(p) => (p, Value::String("derived".into())),
            Err(Error::Parameterization(msg)) => {
                (RshParams::explicit(r, self.epsilon, self.bits, self.tables)?, Value::String(msg))
            }
            Err(e) => return Err(e),
        };
        let session = OracleSession::new(&space);
        let set = RshTableSet::build(&session, params, self.table_seed)?;
        let far = params.far_rank();
        let mut over_cap = 0u64;
        let mut trials = Vec::with_capacity(self.queries);
        for (qseed, q) in queries(&space, self.queries, self.query_seed)? {
            let s = session.with_query(&q)?;
            let trace = set.query(&s)?;
            over_cap += (trace.scanned > 3 * params.tables) as u64;
            let rank = trace.result.map(|o| rank_of(&space, &q, o)).transpose()?;
            trials.push(TrialRecord {
                seed: qseed,
                group: 0,
                questions: trace.questions,
                success: rank.is_some_and(|x| x as usize <= far),
                returned_rank: rank,
            });
        }
        let mut report = ExperimentReport::new("rsh_retrieval", self, trials);
        report.checks.push(Check::at_least("success rate (rank <= (1+eps) r)", report.aggregates.success_rate, MIN_RSH_SUCCESS));
        report.checks.push(Check::holds("queries scanning more than 3 * tables candidates", over_cap));
        report.data = json!({
            "c": display_exact(&fit.c),
            "gamma": display_exact(&fit.gamma),
            "parameterization": derived,
            "params": params,
            "build_questions": set.build_questions(),
        });
        Ok(report)
    }
}

impl GoodCutExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("good_cut", self, Vec::new());
        let n = self.n;
        let mut rows = Vec::new();
        for &d in &self.disorders {
            for &t in &self.offsets {
                let epsilon = (1.0 - t / (8.0 * d)).max(1.0 - 1.0 / (8.0 * d));
                let model = good_cut_probability(d, epsilon, n);
                let counted = good_cut_count(d, epsilon, n) as f64 / n as f64;
                let gap = (model.value - counted).abs();
                report.checks.push(Check::at_most(format!("D={d}, eps={epsilon}: |formula - count/n|"), gap, 2.0 / n as f64));
                rows.push(json!({ "d": d, "epsilon": epsilon, "formula": model.value, "counted": counted, "valid": model.valid }));
            }
        }
        report.data = json!({ "cases": rows });
        Ok(report)
    }
}

pub const POPULARITY_TOLERANCE: f64 = 0.05;

impl PopularityExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("popularity", self, Vec::new());
        let space = torus(self.n, self.d, self.seed)?;
        let rm = direct_ranks(&space)?;
        let est = popularity_scores(&OracleSession::new(&space), self.cuts, self.seed)?;
        let worst = (0..self.n).map(|u| (est.frequency(u) - phi_exact(&rm, u)).abs()).fold(0.0, f64::max);
        report.checks.push(Check::at_most(format!("n={}: max |Y/cuts - phi|", self.n), worst, POPULARITY_TOLERANCE));

        let n = self.exhaustive_n;
        let rm = direct_ranks(&torus(n, self.d, self.seed.wrapping_add(1))?)?;
        let mut off = 0u64;
        let mut largest = 0f64;
        for u in 0..n {
            let gap = phi_exact(&rm, u) - phi_exhaustive(&rm, u, AnchorDraw::Distinct);
            let correction = (0..n).map(|j| rm.get(j, u) as f64).sum::<f64>() / ((n * n) as f64 * (n - 1) as f64);
            off += ((gap - correction).abs() > 1e-12) as u64;
            largest = largest.max(gap.abs());
        }
        report.checks.push(Check::holds(format!("n={n}: exhaustive phi off the distinct-anchor correction"), off));
        report.checks.push(Check::at_most(format!("n={n}: max |exhaustive - phi_exact|"), largest, 2.0 / n as f64));
        report.data = json!({ "questions": est.questions, "ranking_head": &est.ranking[..est.ranking.len().min(10)] });
        Ok(report)
    }
}

impl InvariantExperiment {
    pub fn run(&self) -> Result<ExperimentReport> {
        let mut report = ExperimentReport::new("invariants", self, Vec::new());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let checks = &mut report.checks;

        // oracle determinism and ledger exactness
        let space = torus(self.oracle_n, 2, self.seed)?;
        let n = space.n();
        let s = OracleSession::new(&space).scoped();
        let mut disagreements = 0;
        for _ in 0..self.oracle_questions {
            let (q, u, v) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            let p = |i| Point::Object(i);
            disagreements += (s.ask(p(q), p(u), p(v))? != s.ask(p(q), p(u), p(v))?) as u64;
        }
        checks.push(Check::holds("oracle answers that changed on repeat", disagreements));
        let snap = s.ledger().snapshot();
        let expected = 2 * self.oracle_questions as u64;
        checks.push(Check::holds("ledger drift from questions asked", snap.total().abs_diff(expected)));

        // ranking question bound
        let rm = direct_ranks(&space)?;
        let mut over = 0;
        let mut wrong = 0;
        for m in 2..=n {
            let o = rng.gen_range(0..n);
            let set: Vec<usize> = sample(&mut rng, n, m).into_iter().filter(|&j| j != o).collect();
            let sc = s.scoped();
            let got = sc.rank_objects(Point::Object(o), &set)?;
            over += (sc.ledger().total() > insertion_bound(set.len())) as u64;
            let mut want = set.clone();
            want.sort_by_key(|&j| rm.get(o, j));
            wrong += (got != want) as u64;
        }
        checks.push(Check::holds("rankings over the insertion bound", over));
        checks.push(Check::holds("rankings out of order", wrong));

        // disorder minimality
        let dr = disorder_constant(&rm)?;
        let tight = dr.d == Exact::from_integer(1) || dr.binding().ratio() == dr.d;
        let holds_at_d = satisfies_triangle_inequalities(&rm, dr.d);
        let below = dr.d - Exact::new(1, 1 << 20);
        let fails_below = dr.d == Exact::from_integer(1) || !satisfies_triangle_inequalities(&rm, below);
        checks.push(Check::holds("disorder witness not minimal", (!(tight && holds_at_d && fails_below)) as u64));

        // annulus containment
        let space = torus(self.annulus_n, 2, self.seed.wrapping_add(1))?;
        let rm = direct_ranks(&space)?;
        let dr = disorder_constant(&rm)?;
        let n = rm.n();
        let mut lemma_misses = 0u64;
        let mut search_misses = 0u64;
        for &zeta in &self.annulus_radii {
            for x in 0..n {
                for q in (0..n).filter(|&q| q != x) {
                    let j = rm.get(x, q) as u64;
                    let bounds = annulus_bounds(j, zeta, dr.d);
                    let (lo, hi) = search_annulus(j as usize, zeta as usize, dr.d_f64(), n);
                    for o in (0..n).filter(|&o| o != x && rm.get(q, o) as u64 <= zeta) {
                        let r = rm.get(x, o);
                        lemma_misses += !bounds.contains(r) as u64;
                        search_misses += !(lo as u32 <= r && r as usize <= hi) as u64;
                    }
                }
            }
        }
        checks.push(Check::holds(format!("n={n}: balls outside the rank annulus"), lemma_misses));
        checks.push(Check::holds(format!("n={n}: balls outside the search annulus"), search_misses));

        // diameters
        let mut too_wide = 0;
        for _ in 0..200 {
            let k = rng.gen_range(1..=n);
            let subset = sample(&mut rng, n, k).into_vec();
            too_wide += (diameter(&rm, &subset)? > 2 * (k as u64 - 1)) as u64;
        }
        checks.push(Check::holds("subsets with diameter above 2(k-1)", too_wide));
        let mut unequal = 0;
        for k in [2usize, 5, 17, 64] {
            let line = HiddenSpace::line((0..k).map(|i| i as f64).collect())?;
            let all: Vec<usize> = (0..k).collect();
            unequal += (diameter(&direct_ranks(&line)?, &all)? != 2 * (k as u64 - 1)) as u64;
        }
        checks.push(Check::holds("evenly spaced lines with diameter != 2(n-1)", unequal));

        // cut soundness and the 4Dk diameter bound
        let space = torus(self.cut_n, 2, self.seed.wrapping_add(2))?;
        let rm = direct_ranks(&space)?;
        let dr = disorder_constant(&rm)?;
        let session = OracleSession::new(&space);
        let n = rm.n();
        let all: Vec<usize> = (0..n).collect();
        let anchors: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        let (unsound, wide) = anchors
            .par_iter()
            .map(|&(x1, x2)| {
                let cut = cut_with_anchors(&session, &all, x1, x2)?;
                let k = rm.get(x1, x2);
                let want: BTreeSet<usize> = all.iter().copied().filter(|&u| rm.get(x1, u) < k).collect();
                let got: BTreeSet<usize> = cut.s0.iter().copied().collect();
                let bad = (got != want || cut.k() != k as usize) as u64;
                let bound = Exact::from_integer(4 * k as i64) * dr.d;
                let diam = Exact::from_integer(diameter(&rm, &cut.s0)? as i64);
                Ok::<_, Error>((bad, (diam > bound) as u64))
            })
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
        checks.push(Check::holds(format!("n={n}: unsound cuts"), unsound));
        checks.push(Check::holds(format!("n={n}: cuts with diameter(S0) > 4Dk"), wide));

        // tree depth
        let space = torus(self.tree_n, 2, self.seed.wrapping_add(3))?;
        let session = OracleSession::new(&space);
        let n = space.n();
        let all: Vec<usize> = (0..n).collect();
        let cap = 10.0 * log2(n);
        let mut deepest = 0;
        let mut broken = 0;
        for k in 0..self.tree_seeds as u64 {
            let tree: BinTree = build_tree(&session, &all, 1, 100 * n, self.seed.wrapping_add(k))?;
            deepest = deepest.max(tree.depth);
            let mut ids: Vec<usize> = tree.leaves().flatten().copied().collect();
            ids.sort_unstable();
            broken += (ids != all) as u64;
        }
        checks.push(Check::at_most(format!("n={n}: deepest tree over {} seeds", self.tree_seeds), deepest as f64, cap));
        checks.push(Check::holds("trees whose leaves do not partition the set", broken));

        // index formats
        let space = torus(64, 2, self.seed.wrapping_add(4))?;
        let session = OracleSession::new(&space);
        let mut bad = 0;
        let hier = HierIndex::build(&session, BuildConfig::new(2.0, 2.0, self.seed)?)?;
        bad += (HierIndex::from_bytes(&hier.to_bytes())? != hier) as u64;
        let ann = AnnulusIndex::learn(&session, 8, self.seed)?;
        bad += (AnnulusIndex::from_bytes(&ann.to_bytes())? != ann) as u64;
        let rsh = RshTableSet::build(&session, RshParams::explicit(4, 1.0, 5, 3)?, self.seed)?;
        bad += (RshTableSet::from_bytes(&rsh.to_bytes())? != rsh) as u64;
        checks.push(Check::holds("index formats that do not round-trip", bad));
        Ok(report)
    }
}

/// Parse a suite file: an optional `[suite]` table and an `[[experiment]]`
/// array of tagged experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub suite: SuiteMeta,
    #[serde(rename = "experiment", default)]
    pub experiments: Vec<Experiment>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteMeta {
    pub name: String,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return invalid("suite declares no experiments");
        }
        Ok(())
    }
}
