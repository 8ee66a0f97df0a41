use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankq::experiments::{monotone_violations, smooth, SMOOTHING_WINDOW};
use rankq::{
    build_tree, compute_rank_matrix, derive_params, disorder_constant, distortion_fit, make_star_graph,
    popularity_scores, AnnulusIndex, AnnulusParams, BuildConfig, Dataset, DistortionFit, Experiment, HiddenSpace,
    HierIndex, OracleSession, QueryPoint, QueryRanks, RankMatrix, RankMode, RshParams, RshTableSet, SuiteConfig,
};
use serde_json::{json, Value};

use crate::*;

pub(crate) fn dispatch(cmd: Command, inv: &[String]) -> CliResult<()> {
    match cmd {
        Command::Gen(a) => gen(a, inv),
        Command::Ranks(a) => ranks(a, inv),
        Command::Disorder(a) => disorder(a, inv),
        Command::Distortion(a) => distortion(a, inv),
        Command::BuildHier(a) => build_hier(a, inv),
        Command::QueryHier(a) => query_hier(a, inv),
        Command::Annulus(AnnulusCommand::Learn(a)) => annulus_learn(a, inv),
        Command::Annulus(AnnulusCommand::Search(a)) => annulus_search(a, inv),
        Command::Tree(a) => tree(a, inv),
        Command::Popularity(a) => popularity(a, inv),
        Command::Rsh(RshCommand::Build(a)) => rsh_build(a, inv),
        Command::Rsh(RshCommand::Query(a)) => rsh_query(a, inv),
        Command::Bench(a) => bench(a, inv),
        Command::Suite(a) => suite(a, inv),
    }
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Load a dataset. Without `verify` the space is sealed, so only the oracle
/// can see distances.
fn load(path: &Path, verify: bool) -> CliResult<Dataset<f64>> {
    let mut ds = Dataset::<f64>::load(path)?;
    if !verify {
        ds.space.seal();
    }
    Ok(ds)
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn csv_header(inv: &[String], seed: Option<u64>) -> String {
    let mut s = format!("# invocation: {}", inv.join(" "));
    if let Some(seed) = seed {
        s.push_str(&format!("; seed: {seed}"));
    }
    s.push('\n');
    s
}

fn oracle_ranks(space: &HiddenSpace<f64>) -> CliResult<(RankMatrix, u64)> {
    let s = OracleSession::new(space);
    let rm = compute_rank_matrix(&s, RankMode::Oracle)?;
    Ok((rm, s.ledger().total()))
}

fn check_cap(n: usize, max_n: usize) -> CliResult<()> {
    if n > max_n {
        return usage(format!(
            "n = {n} exceeds the brute-force cap of {max_n} (cubic in n); raise --max-n to force it"
        ));
    }
    Ok(())
}

/// Queries chosen by flags: explicit coordinates, else stored queries, else
/// `--queries` random ones.
fn queries(ds: &Dataset<f64>, q: &QueryArgs) -> CliResult<Vec<QueryPoint<f64>>> {
    if !q.query.is_empty() {
        return q
            .query
            .iter()
            .map(|s| {
                s.split(',')
                    .map(|c| c.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad query coordinate {c:?}"))))
                    .collect::<CliResult<Vec<f64>>>()
                    .map(QueryPoint::Coords)
            })
            .collect();
    }
    if !ds.queries.is_empty() {
        return Ok(ds.queries.clone());
    }
    if q.queries == 0 {
        return usage("--queries must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(q.query_seed);
    (0..q.queries).map(|_| ds.space.random_query(&mut rng).map_err(Failure::from)).collect()
}

fn query_rank(ds: &Dataset<f64>, q: &QueryPoint<f64>, result: usize) -> CliResult<u32> {
    let gt = ds.space.ground_truth()?;
    Ok(QueryRanks::to_objects_only(&gt, q)?[result])
}

fn gen(a: GenArgs, inv: &[String]) -> CliResult<()> {
    let need_n = || a.n.ok_or_else(|| Failure::Usage("--n is required for this kind".into()));
    let ds = match a.kind {
        Kind::Torus => Dataset::new(HiddenSpace::torus(need_n()?, a.d, a.seed)?),
        Kind::Line => {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            Dataset::new(HiddenSpace::line((0..need_n()?).map(|_| rng.gen::<f64>()).collect())?)
        }
        Kind::Star => Dataset::from_star(&make_star_graph::<f64>(a.alpha, a.spb, a.seed)?),
        Kind::Csv => {
            let path = a.csv.as_ref().ok_or_else(|| Failure::Usage("--csv is required for --kind csv".into()))?;
            let text = String::from_utf8(read(path)?).map_err(|_| Failure::Usage("CSV is not UTF-8".into()))?;
            Dataset::from_csv(&text)?
        }
    };
    ds.save(&a.out)?;
    emit(
        &json!({
            "invocation": inv,
            "seed": a.seed,
            "kind": format!("{:?}", ds.space.kind()),
            "n": ds.space.n(),
            "dim": ds.space.dim(),
            "queries": ds.queries.len(),
            "out": a.out,
        }),
        None,
    )
}

fn ranks(a: RanksArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, a.verify)?;
    let s = OracleSession::new(&ds.space);
    let mode = if a.verify { RankMode::Direct } else { RankMode::Oracle };
    let rm = compute_rank_matrix(&s, mode)?;
    write_file(&a.out, csv_header(inv, None) + &rm.to_csv())?;
    emit(
        &json!({
            "invocation": inv,
            "n": rm.n(),
            "mode": format!("{mode:?}"),
            "questions": s.ledger().total(),
            "out": a.out,
        }),
        None,
    )
}

fn disorder(a: DisorderArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, a.verify)?;
    let n = ds.space.n() + if a.verify { ds.queries.len().min(1) } else { 0 };
    check_cap(n, a.max_n)?;
    let (mut rm, questions) = oracle_ranks(&ds.space)?;
    let with_query = a.verify && !ds.queries.is_empty();
    if with_query {
        let qr = QueryRanks::compute(&ds.space.ground_truth()?, &ds.queries[0])?;
        rm = rm.augmented(&qr);
    }
    let dr = disorder_constant(&rm)?;
    emit(
        &json!({
            "invocation": inv,
            "n": rm.n(),
            "with_query": with_query,
            "d": dr.d.to_string(),
            "d_f64": dr.d_f64(),
            "binding": dr.binding(),
            "witnesses": dr.witnesses,
            "questions": questions,
        }),
        a.out.as_deref(),
    )
}

fn pairs_csv(fit: &DistortionFit) -> String {
    let mut s = String::from("anchor,other,rank,l1\n");
    for p in &fit.pairs {
        s.push_str(&format!("{},{},{},{}\n", p.anchor, p.other, p.rank, p.l1));
    }
    s
}

fn fit_summary(fit: &DistortionFit) -> Value {
    let means: Vec<f64> = fit.curve.iter().map(|b| b.mean_l1).collect();
    let smoothed = smooth(&means, SMOOTHING_WINDOW);
    json!({
        "anchors": fit.anchors.len(),
        "pairs": fit.pairs.len(),
        "c": fit.c.to_string(),
        "gamma": fit.gamma.to_string(),
        "sandwich_holds": fit.sandwich_holds(),
        "smoothing_window": SMOOTHING_WINDOW,
        "smoothed_decreases": monotone_violations(&smoothed),
    })
}

fn distortion_outputs(
    space: &HiddenSpace<f64>,
    anchors: usize,
    seed: u64,
    out: Option<&Path>,
    pairs: Option<&Path>,
    json_out: Option<&Path>,
    inv: &[String],
) -> CliResult<()> {
    let (rm, questions) = oracle_ranks(space)?;
    let fit = distortion_fit(&rm, anchors, seed)?;
    if let Some(p) = out {
        write_file(p, csv_header(inv, Some(seed)) + &fit.curve_csv())?;
    }
    if let Some(p) = pairs {
        write_file(p, csv_header(inv, Some(seed)) + &pairs_csv(&fit))?;
    }
    let mut v = fit_summary(&fit);
    v["invocation"] = json!(inv);
    v["seed"] = json!(seed);
    v["n"] = json!(rm.n());
    v["questions"] = json!(questions);
    emit(&v, json_out)
}

fn distortion(a: DistortionArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, false)?;
    distortion_outputs(&ds.space, a.anchors, a.seed, a.out.as_deref(), a.pairs.as_deref(), a.json.as_deref(), inv)
}

fn build_hier(a: BuildHierArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, false)?;
    let s = OracleSession::new(&ds.space);
    let (d, measured) = match a.disorder {
        Some(d) => (d, false),
        None => {
            check_cap(ds.space.n(), a.max_n)?;
            let rm = compute_rank_matrix(&s.scoped(), RankMode::Oracle)?;
            (disorder_constant(&rm)?.d_f64(), true)
        }
    };
    let cfg = BuildConfig::new(d, a.a, a.seed)?;
    let (idx, attempts) = HierIndex::build_with_retry(&s, cfg, a.attempts)?;
    write_file(&a.out, idx.to_bytes())?;
    emit(
        &json!({
            "invocation": inv,
            "seed": a.seed,
            "config": idx.config(),
            "disorder_measured": measured,
            "levels": idx.levels(),
            "kappa": idx.kappa(),
            "attempts": attempts,
            "stats": idx.stats(),
            "questions": s.ledger().total(),
            "out": a.out,
        }),
        None,
    )
}

fn query_hier(a: QueryHierArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, a.q.verify)?;
    let idx = HierIndex::from_bytes(&read(&a.index)?)?;
    if idx.n() != ds.space.n() {
        return usage(format!("index covers {} objects, dataset has {}", idx.n(), ds.space.n()));
    }
    let s = OracleSession::new(&ds.space);
    let mut results = Vec::new();
    for q in queries(&ds, &a.q)? {
        let sq = s.with_query(&q)?;
        let hit = match a.stop_level {
            Some(level) => idx.search_rnn(&sq, level)?,
            None => idx.search(&sq)?,
        };
        let mut v = serde_json::to_value(&hit).expect("search serializes");
        if a.q.verify {
            v["rank"] = json!(query_rank(&ds, &q, hit.nearest)?);
        }
        results.push(v);
    }
    emit(
        &json!({ "invocation": inv, "query_seed": a.q.query_seed, "results": results }),
        a.out.as_deref(),
    )
}

fn annulus_learn(a: AnnulusLearnArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, false)?;
    let s = OracleSession::new(&ds.space);
    let idx = AnnulusIndex::learn(&s, a.m, a.seed)?;
    write_file(&a.out, idx.to_bytes())?;
    emit(
        &json!({
            "invocation": inv,
            "seed": a.seed,
            "m": a.m,
            "samples": idx.samples(),
            "questions": idx.learn_questions(),
            "out": a.out,
        }),
        None,
    )
}

fn annulus_search(a: AnnulusSearchArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, a.q.verify)?;
    let idx = AnnulusIndex::from_bytes(&read(&a.index)?)?;
    if idx.n() != ds.space.n() {
        return usage(format!("index covers {} objects, dataset has {}", idx.n(), ds.space.n()));
    }
    let params = AnnulusParams { budget_multiplier: a.budget_multiplier, ..AnnulusParams::new(a.r, a.disorder, a.seed) };
    let s = OracleSession::new(&ds.space);
    let mut results = Vec::new();
    for q in queries(&ds, &a.q)? {
        let t = idx.search(&s.with_query(&q)?, &params)?;
        let mut v = serde_json::to_value(&t).expect("trace serializes");
        if a.q.verify {
            let rank = query_rank(&ds, &q, t.result)?;
            v["rank"] = json!(rank);
            v["success"] = json!(rank as usize <= a.r);
        }
        results.push(v);
    }
    emit(
        &json!({ "invocation": inv, "params": params, "query_seed": a.q.query_seed, "results": results }),
        a.out.as_deref(),
    )
}

fn tree(a: TreeArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, false)?;
    let s = OracleSession::new(&ds.space);
    let all: Vec<usize> = (0..ds.space.n()).collect();
    let t = build_tree(&s, &all, a.min_leaf, a.max_depth, a.seed)?;
    let mut v = serde_json::to_value(&t).expect("tree serializes");
    v["invocation"] = json!(inv);
    emit(&v, Some(&a.out))?;
    emit(
        &json!({
            "invocation": inv,
            "seed": a.seed,
            "depth": t.depth,
            "leaves": t.leaves().count(),
            "retries": t.retries,
            "accepted_degenerate": t.accepted_degenerate,
            "questions": t.questions,
            "out": a.out,
        }),
        None,
    )
}

fn popularity(a: PopularityArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, false)?;
    let s = OracleSession::new(&ds.space);
    let mut est = popularity_scores(&s, a.cuts, a.seed)?;
    let mut rank_questions = 0;
    if a.exact {
        let (rm, q) = oracle_ranks(&ds.space)?;
        rank_questions = q;
        est = est.with_exact(&rm);
    }
    write_file(&a.out, csv_header(inv, Some(a.seed)) + &est.to_csv())?;
    emit(
        &json!({
            "invocation": inv,
            "seed": a.seed,
            "cuts": a.cuts,
            "top": est.ranking.iter().take(10).collect::<Vec<_>>(),
            "questions": est.questions,
            "rank_questions": rank_questions,
            "out": a.out,
        }),
        None,
    )
}

fn rsh_build(a: RshBuildArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, false)?;
    let n = ds.space.n();
    let mut params = match (a.bits, a.tables) {
        (Some(bits), Some(tables)) => RshParams::explicit(a.r, a.epsilon, bits, tables)?,
        _ => {
            let (rm, _) = oracle_ranks(&ds.space)?;
            derive_params(n, a.r, a.epsilon, &distortion_fit(&rm, a.anchors, a.seed)?)?
        }
    };
    if let Some(cap) = a.scan_cap {
        params = params.with_scan_cap(cap);
    }
    let s = OracleSession::new(&ds.space);
    let set = RshTableSet::build(&s, params, a.seed)?;
    write_file(&a.out, set.to_bytes())?;
    emit(
        &json!({
            "invocation": inv,
            "seed": a.seed,
            "params": set.params(),
            "questions": set.build_questions(),
            "out": a.out,
        }),
        None,
    )
}

fn rsh_query(a: RshQueryArgs, inv: &[String]) -> CliResult<()> {
    let ds = load(&a.input, a.q.verify)?;
    let set = RshTableSet::from_bytes(&read(&a.index)?)?;
    let s = OracleSession::new(&ds.space);
    let mut results = Vec::new();
    for q in queries(&ds, &a.q)? {
        let mut t = set.query(&s.with_query(&q)?)?;
        if a.q.verify {
            t.result_rank = t.result.map(|u| query_rank(&ds, &q, u)).transpose()?;
        }
        results.push(t);
    }
    emit(
        &json!({ "invocation": inv, "params": set.params(), "query_seed": a.q.query_seed, "results": results }),
        a.out.as_deref(),
    )
}

/// Default parameters of `kind`, with `key=value` overrides applied.
fn experiment(kind: &str, overrides: &[String]) -> CliResult<Experiment> {
    let base = Experiment::acceptance_suite()
        .into_iter()
        .find(|e| e.name() == kind)
        .ok_or_else(|| {
            let known: Vec<&str> = Experiment::acceptance_suite().iter().map(|e| e.name()).collect();
            Failure::Usage(format!("unknown experiment {kind:?}; expected one of {}", known.join(", ")))
        })?;
    let mut v = serde_json::to_value(&base).expect("experiment serializes");
    for o in overrides {
        let (key, value) =
            o.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects key=value, got {o:?}")))?;
        let value: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        v[key.trim()] = value;
    }
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("bad override: {e}")))
}

fn report_summary(r: &rankq::ExperimentReport) -> Value {
    json!({
        "name": r.name,
        "pass": r.pass(),
        "checks": r.checks.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "aggregates": r.aggregates,
    })
}

fn bench(a: BenchArgs, inv: &[String]) -> CliResult<()> {
    if a.experiment == "distortion" {
        if let Some(input) = &a.input {
            let ds = load(input, false)?;
            let out = a.out.clone().unwrap_or_else(|| "curve.csv".into());
            return distortion_outputs(&ds.space, a.anchors, a.seed, Some(&out), a.pairs.as_deref(), a.json.as_deref(), inv);
        }
    }
    if !a.verify {
        return usage("bench experiments read ground truth; pass --verify");
    }
    let exp = experiment(&a.experiment, &a.set)?;
    let report = exp.run()?;
    if let Some(p) = &a.out {
        write_file(p, csv_header(inv, None) + &report.trials_csv())?;
    }
    let mut full = serde_json::to_value(&report).expect("report serializes");
    full["invocation"] = json!(inv);
    if let Some(p) = &a.json {
        emit(&full, Some(p))?;
    }
    let summary = report_summary(&report);
    if report.pass() {
        emit(&summary, None)
    } else {
        Err(Failure::Algorithm(json!({ "error": "criterion_failed", "report": summary })))
    }
}

fn suite(a: SuiteArgs, inv: &[String]) -> CliResult<()> {
    if !a.verify {
        return usage("suite experiments read ground truth; pass --verify");
    }
    let text = String::from_utf8(read(&a.config)?).map_err(|_| Failure::Usage("config is not UTF-8".into()))?;
    let cfg: SuiteConfig = toml::from_str(&text).map_err(|e| Failure::Usage(format!("malformed config: {e}")))?;
    cfg.validate()?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let mut summaries = Vec::new();
    for (k, exp) in cfg.experiments.iter().enumerate() {
        let report = exp.run()?;
        let mut full = serde_json::to_value(&report).expect("report serializes");
        full["invocation"] = json!(inv);
        let stem = format!("{:02}_{}", k + 1, exp.name());
        emit(&full, Some(&a.out_dir.join(format!("{stem}.json"))))?;
        write_file(&a.out_dir.join(format!("{stem}.csv")), csv_header(inv, None) + &report.trials_csv())?;
        eprintln!("{} {}", if report.pass() { "PASS" } else { "FAIL" }, stem);
        summaries.push(report_summary(&report));
    }
    let all_pass = summaries.iter().all(|s| s["pass"] == json!(true));
    let summary = json!({
        "invocation": inv,
        "suite": cfg.suite.name,
        "pass": all_pass,
        "experiments": summaries,
    });
    emit(&summary, Some(&a.out_dir.join("summary.json")))?;
    if all_pass {
        emit(&summary, None)
    } else {
        Err(Failure::Algorithm(json!({ "error": "criterion_failed", "suite": cfg.suite.name, "pass": false })))
    }
}
