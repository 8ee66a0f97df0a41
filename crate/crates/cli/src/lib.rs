//! The `rankq` command line.
//!
//! Exit status: 0 on success, 1 on an algorithmic failure (with a diagnostic
//! JSON on stdout), 2 on invalid arguments or unreadable inputs.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "rankq", version, about = "Nearest-neighbor search through a similarity oracle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file.
    Gen(GenArgs),
    /// Rank matrix as CSV.
    Ranks(RanksArgs),
    /// Exact disorder constant by brute force.
    Disorder(DisorderArgs),
    /// Rank-distortion curve and linear sandwich.
    Distortion(DistortionArgs),
    /// Build a hierarchical index.
    BuildHier(BuildHierArgs),
    /// Search a hierarchical index.
    QueryHier(QueryHierArgs),
    /// Learn or search an annulus index.
    #[command(subcommand)]
    Annulus(AnnulusCommand),
    /// Build a rank-ball tree.
    Tree(TreeArgs),
    /// Popularity counts over random cuts.
    Popularity(PopularityArgs),
    /// Build or query rank-sensitive hash tables.
    #[command(subcommand)]
    Rsh(RshCommand),
    /// Run one experiment.
    Bench(BenchArgs),
    /// Run every experiment in a suite file.
    Suite(SuiteArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Torus,
    Line,
    Star,
    Csv,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub alpha: usize,
    #[arg(long, default_value_t = 4)]
    pub spb: usize,
    /// Distance matrix to import with `--kind csv`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RanksArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Read concealed distances instead of asking the oracle.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct DisorderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2048)]
    pub max_n: usize,
    /// Include the dataset's stored queries (reads concealed distances).
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistortionArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Curve CSV (rank, mean_l1, std_l1).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-pair CSV (anchor, other, rank, l1).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Query coordinates, comma separated. Repeatable.
    #[arg(long = "query")]
    pub query: Vec<String>,
    /// Number of random queries when no explicit or stored query is used.
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub query_seed: u64,
    /// Report ground-truth ranks of the answers.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct BuildHierArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Disorder constant; measured through the oracle when omitted.
    #[arg(long)]
    pub disorder: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub attempts: usize,
    #[arg(long, default_value_t = 2048)]
    pub max_n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryHierArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Stop at this level and return its closest sample.
    #[arg(long)]
    pub stop_level: Option<usize>,
    #[command(flatten)]
    pub q: QueryArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnnulusCommand {
    Learn(AnnulusLearnArgs),
    Search(AnnulusSearchArgs),
}

#[derive(Debug, Args)]
pub struct AnnulusLearnArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnulusSearchArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub r: usize,
    #[arg(long)]
    pub disorder: f64,
    #[arg(long, default_value_t = 1.0)]
    pub budget_multiplier: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub q: QueryArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 64)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PopularityArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub cuts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add the exact membership probability from oracle ranks.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum RshCommand {
    Build(RshBuildArgs),
    Query(RshQueryArgs),
}

#[derive(Debug, Args)]
pub struct RshBuildArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub r: usize,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Explicit table shape; derived from a distortion fit when omitted.
    #[arg(long, requires = "tables")]
    pub bits: Option<usize>,
    #[arg(long, requires = "bits")]
    pub tables: Option<usize>,
    #[arg(long)]
    pub scan_cap: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RshQueryArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub q: QueryArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiment kind, e.g. `distortion`, `hier_success`, `annulus`.
    pub experiment: String,
    /// Run the distortion bench on this dataset through the oracle.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override an experiment parameter, `key=value` with a JSON value.
    #[arg(long = "set")]
    pub set: Vec<String>,
    /// Per-pair records for `bench distortion --in`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub verify: bool,
}

/// What went wrong, and with which exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed inputs.
    Usage(String),
    /// The algorithm ran and failed; carries the diagnostic.
    Algorithm(Value),
}

impl From<rankq::Error> for Failure {
    fn from(e: rankq::Error) -> Self {
        use rankq::Error::*;
        match &e {
            BuildFailure { object, level } => Failure::Algorithm(json!({
                "error": "build_failure", "object": object, "level": level, "message": e.to_string(),
            })),
            SearchFailure { level } => Failure::Algorithm(json!({
                "error": "search_failure", "level": level, "message": e.to_string(),
            })),
            Parameterization(_) => Failure::Algorithm(json!({
                "error": "parameterization", "message": e.to_string(),
            })),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Parse `argv` (including the program name) and run it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let invocation: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli.command, &invocation) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("rankq: {msg}");
            2
        }
        Err(Failure::Algorithm(diag)) => {
            let mut diag = diag;
            diag["invocation"] = json!(invocation);
            print_out(&serde_json::to_string_pretty(&diag).expect("diagnostic serializes"));
            1
        }
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error worth reporting.
fn print_out(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON to `out`, or stdout when no path is given.
pub(crate) fn emit(value: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    match out {
        Some(p) => write_file(p, text + "\n"),
        None => {
            print_out(&text);
            Ok(())
        }
    }
}
