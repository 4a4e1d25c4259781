//! `stopclock` — pipeline driver for short-term timeout effect analysis.
//!
//! Subcommands:
//!
//! * `simulate` — generate a synthetic season (with known ground truth)
//!   as play-by-play CSV, instants CSV, and `truth.json`;
//! * `ingest` — parse play-by-play CSV and segment it into game instants;
//! * `analyze` — build treated/control units, match them (no-balance,
//!   Mahalanobis, or propensity), and run randomization inference,
//!   producing `report.json` and `balance.csv`;
//! * `naive` — the unadjusted comparison: outcome distributions at
//!   timeouts vs. ordinary possessions (`naive.json`, `density.csv`).
//!
//! Exit codes: 0 success (including warned empty results), 1 runtime or
//! data-integrity failure, 2 usage or input-schema error. `report.json`
//! is byte-identical across runs with equal flags and seed; `manifest.json`
//! (which carries the wall-clock duration) is written separately for that
//! reason.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use stopclock::cohort::{
    build_units, prefilter_controls, subgroup_filter, write_units_csv, SubgroupMode, Unit,
};
use stopclock::diagnostics::{
    balance_rows, covariate_values, fd_histogram, write_balance_csv, write_density_csv,
};
use stopclock::inference::{
    invert_ci, naive_stmc_summary, paired_differences, permutation_test, EffectReport,
    NaiveSummary,
};
use stopclock::matching::{match_units, MatchAlgorithm, MatchConfig, MatchMethod};
use stopclock::pbp::{
    parse_pbp, read_instants_csv, segment_all, write_instants_csv, write_pbp_csv, GameInstants,
    IngestError, InstantKind, Side,
};
use stopclock::propensity::{fit, GbmConfig};
use stopclock::rng::derive_seed;
use stopclock::simulator::{generate, SimConfig, TimeoutPolicy};
use stopclock::stmc::validate_lambda;

/// Seed stream identifiers, so one user seed fans out into independent
/// streams for each randomized stage.
const STREAM_GBM: u64 = 1;
const STREAM_MATCH: u64 = 2;
const STREAM_PERM: u64 = 3;
const STREAM_NAIVE_TIMEOUT: u64 = 4;
const STREAM_NAIVE_POSSESSION: u64 = 5;

const STANDARD_LAMBDAS: [usize; 3] = [2, 4, 6];

#[derive(Parser)]
#[command(name = "stopclock", version, about = "Short-term timeout effect pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic season with known ground truth.
    Simulate(SimulateArgs),
    /// Parse play-by-play CSV and segment it into game instants.
    Ingest(IngestArgs),
    /// Matched analysis: units, matching, balance, randomization inference.
    Analyze(AnalyzeArgs),
    /// Unadjusted comparison of timeout vs. possession outcomes.
    Naive(NaiveArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of games.
    #[arg(long, default_value_t = 100)]
    games: usize,
    /// Possessions per side per quarter.
    #[arg(long, default_value_t = 24)]
    possessions: usize,
    /// Injected per-instant timeout effect, in [-1, 1].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    delta: f64,
    /// Momentum threshold: call eagerly when the recent run is <= theta.
    #[arg(long, default_value_t = -4, allow_hyphen_values = true)]
    theta: i32,
    /// Timeout probability on an ordinary possession boundary.
    #[arg(long, default_value_t = 0.01)]
    pi0: f64,
    /// Timeout probability when the momentum trigger fires.
    #[arg(long, default_value_t = 0.3)]
    pi1: f64,
    /// Policy trigger window and effect duration, in instants.
    #[arg(long, default_value_t = 4)]
    lambda: usize,
    /// Elapsed-second marks for official timeouts, e.g. "360,540".
    #[arg(long, value_delimiter = ',')]
    official_marks: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    /// Play-by-play CSV.
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Home,
    Away,
}

impl SideArg {
    fn side(self) -> Side {
        match self {
            SideArg::Home => Side::Home,
            SideArg::Away => Side::Away,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// No-balance: any feasible pairing, distance zero.
    Nb,
    /// Mahalanobis distance on (quarter, margin, seconds).
    Mahalanobis,
    /// Absolute difference of boosted propensity scores.
    Propensity,
}

impl MethodArg {
    fn method(self) -> MatchMethod {
        match self {
            MethodArg::Nb => MatchMethod::NoBalance,
            MethodArg::Mahalanobis => MatchMethod::Mahalanobis,
            MethodArg::Propensity => MatchMethod::Propensity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Optimal,
    Greedy,
}

impl AlgorithmArg {
    fn algorithm(self) -> MatchAlgorithm {
        match self {
            AlgorithmArg::Optimal => MatchAlgorithm::Optimal,
            AlgorithmArg::Greedy => MatchAlgorithm::Greedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubgroupArg {
    All,
    /// Drop fourth-quarter instants in the final five minutes.
    MinusLast5,
    /// Keep only fourth-quarter instants in the final five minutes.
    OnlyLast5,
}

impl SubgroupArg {
    fn mode(self) -> SubgroupMode {
        match self {
            SubgroupArg::All => SubgroupMode::All,
            SubgroupArg::MinusLast5 => SubgroupMode::MinusLast5,
            SubgroupArg::OnlyLast5 => SubgroupMode::OnlyLast5,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV: play-by-play or instants (detected from the header).
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Outcome window half-width (2, 4, or 6 unless --allow-any-lambda).
    #[arg(long, default_value_t = 2)]
    lambda: usize,
    /// Permit half-widths outside the standard 2/4/6 set.
    #[arg(long)]
    allow_any_lambda: bool,
    /// Side whose timeouts are the treatment.
    #[arg(long, value_enum, default_value_t = SideArg::Home)]
    side: SideArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Propensity)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Optimal)]
    algorithm: AlgorithmArg,
    #[arg(long, value_enum, default_value_t = SubgroupArg::All)]
    subgroup: SubgroupArg,
    /// Sign-flip permutations for the test and interval.
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    /// Test size of the inverted confidence interval.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: STOPCLOCK_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the analysis units (post subgroup and prefilter) here.
    #[arg(long)]
    units_out: Option<PathBuf>,
}

#[derive(Args)]
struct NaiveArgs {
    /// Input CSV: play-by-play or instants (detected from the header).
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Outcome window half-width (2, 4, or 6 unless --allow-any-lambda).
    #[arg(long, default_value_t = 2)]
    lambda: usize,
    /// Permit half-widths outside the standard 2/4/6 set.
    #[arg(long)]
    allow_any_lambda: bool,
    /// Bootstrap replicates for the mean test.
    #[arg(long, default_value_t = 2000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure plus the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

/// Schema and row problems are usage-class (2); integrity and IO are
/// runtime-class (1).
fn ingest_failure(e: IngestError) -> Failure {
    let code = match &e {
        IngestError::MissingColumn(_) | IngestError::Row { .. } | IngestError::Csv(_) => 2,
        IngestError::Integrity { .. } | IngestError::Io(_) => 1,
    };
    Failure { code, error: e.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Naive(a) => cmd_naive(a),
    }
}

#[derive(Serialize)]
struct Manifest {
    subcommand: String,
    args: BTreeMap<String, String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    seed: u64,
    version: String,
    duration_ms: u128,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))
        .map_err(Failure::runtime)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::runtime)
}

fn create_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::runtime)
}

fn finish_manifest(
    out_dir: &Path,
    subcommand: &str,
    args: BTreeMap<String, String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    seed: u64,
    started: Instant,
) -> Result<(), Failure> {
    let manifest = Manifest {
        subcommand: subcommand.to_string(),
        args,
        inputs,
        outputs,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_ms: started.elapsed().as_millis(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)
}

/// Reads either canonical CSV format into segmented game instants,
/// detecting which one from the header line.
fn load_games(path: &Path) -> Result<Vec<GameInstants>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::runtime)?;
    let header = text.lines().next().unwrap_or("");
    if header.starts_with("game_id,period,") {
        let games = parse_pbp(text.as_bytes()).map_err(ingest_failure)?;
        segment_all(&games).map_err(ingest_failure)
    } else if header.starts_with("game_id,t,") {
        read_instants_csv(text.as_bytes()).map_err(ingest_failure)
    } else {
        Err(Failure::usage(anyhow!(
            "unrecognized input header in {}: expected play-by-play \
             (game_id,period,...) or instants (game_id,t,...)",
            path.display()
        )))
    }
}

fn check_lambda(lambda: usize, allow_any: bool) -> Result<(), Failure> {
    validate_lambda(lambda).map_err(Failure::usage)?;
    if !allow_any && !STANDARD_LAMBDAS.contains(&lambda) {
        return Err(Failure::usage(anyhow!(
            "lambda {lambda} is outside the standard set {STANDARD_LAMBDAS:?}; \
             pass --allow-any-lambda to use it"
        )));
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = SimConfig {
        n_games: a.games,
        possessions_per_quarter: a.possessions,
        policy: TimeoutPolicy {
            momentum_threshold: a.theta,
            base_prob: a.pi0,
            momentum_prob: a.pi1,
        },
        official_marks: a.official_marks.clone(),
        delta: a.delta,
        lambda: a.lambda,
        seed: a.seed,
        ..SimConfig::default()
    };
    // Configuration problems are usage errors.
    let out = generate(&cfg).map_err(Failure::usage)?;

    create_out_dir(&a.out_dir)?;
    let pbp_path = a.out_dir.join("pbp.csv");
    let instants_path = a.out_dir.join("instants.csv");
    let truth_path = a.out_dir.join("truth.json");

    let write_csv = |path: &Path, f: &dyn Fn(&mut Vec<u8>) -> Result<(), IngestError>| {
        let mut buf = Vec::new();
        f(&mut buf).map_err(ingest_failure)?;
        fs::write(path, buf)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::runtime)
    };
    write_csv(&pbp_path, &|buf| write_pbp_csv(buf, &out.games))?;
    write_csv(&instants_path, &|buf| write_instants_csv(buf, &out.instants))?;
    write_json(&truth_path, &out.truth)?;

    let n_events: usize = out.games.iter().map(|g| g.events.len()).sum();
    let n_instants: usize = out.instants.iter().map(|g| g.instants.len()).sum();
    println!(
        "simulated {} games: {} events, {} instants (delta = {})",
        out.games.len(),
        n_events,
        n_instants,
        cfg.delta
    );

    let mut args = BTreeMap::new();
    args.insert("games".into(), a.games.to_string());
    args.insert("possessions".into(), a.possessions.to_string());
    args.insert("delta".into(), a.delta.to_string());
    args.insert("theta".into(), a.theta.to_string());
    args.insert("pi0".into(), a.pi0.to_string());
    args.insert("pi1".into(), a.pi1.to_string());
    args.insert("lambda".into(), a.lambda.to_string());
    args.insert(
        "official_marks".into(),
        a.official_marks.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    args.insert("seed".into(), a.seed.to_string());
    finish_manifest(
        &a.out_dir,
        "simulate",
        args,
        vec![],
        vec!["pbp.csv".into(), "instants.csv".into(), "truth.json".into()],
        a.seed,
        started,
    )
}

fn cmd_ingest(a: IngestArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let text = fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(Failure::runtime)?;
    let games = parse_pbp(text.as_bytes()).map_err(ingest_failure)?;
    let instants = segment_all(&games).map_err(ingest_failure)?;

    create_out_dir(&a.out_dir)?;
    let mut buf = Vec::new();
    write_instants_csv(&mut buf, &instants).map_err(ingest_failure)?;
    let out_path = a.out_dir.join("instants.csv");
    fs::write(&out_path, buf)
        .with_context(|| format!("writing {}", out_path.display()))
        .map_err(Failure::runtime)?;

    let n_instants: usize = instants.iter().map(|g| g.instants.len()).sum();
    println!("ingested {} games into {} instants", instants.len(), n_instants);

    finish_manifest(
        &a.out_dir,
        "ingest",
        BTreeMap::new(),
        vec![a.input.display().to_string()],
        vec!["instants.csv".into()],
        0,
        started,
    )
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let started = Instant::now();
    check_lambda(a.lambda, a.allow_any_lambda)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Failure::usage(anyhow!(
            "alpha must lie strictly between 0 and 1, got {}",
            a.alpha
        )));
    }
    if a.permutations == 0 {
        return Err(Failure::usage(anyhow!("--permutations must be at least 1")));
    }

    let threads = a
        .threads
        .or_else(|| std::env::var("STOPCLOCK_THREADS").ok().and_then(|v| v.parse().ok()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("building thread pool")
        .map_err(Failure::runtime)?;

    let games = load_games(&a.input)?;
    let side = a.side.side();
    let all_units = build_units(&games, a.lambda, side).map_err(Failure::usage)?;
    let units = prefilter_controls(&subgroup_filter(&all_units, a.subgroup.mode()));

    create_out_dir(&a.out_dir)?;
    let mut outputs = vec!["report.json".into(), "balance.csv".into()];
    if let Some(units_path) = &a.units_out {
        let mut buf = Vec::new();
        write_units_csv(&mut buf, &units).map_err(ingest_failure)?;
        fs::write(units_path, buf)
            .with_context(|| format!("writing {}", units_path.display()))
            .map_err(Failure::runtime)?;
        outputs.push(units_path.display().to_string());
    }

    let report = pool.install(|| analyze_units(&a, &units))?;

    println!(
        "analyze: lambda={} method={} n_pairs={} te={} p={}",
        report.lambda,
        report.method,
        report.n_pairs,
        report.te.map_or("null".into(), |v| format!("{v:.4}")),
        report.p_value.map_or("null".into(), |v| format!("{v:.4}")),
    );
    write_json(&a.out_dir.join("report.json"), &[&report])?;

    let mut args = BTreeMap::new();
    args.insert("lambda".into(), a.lambda.to_string());
    args.insert("allow_any_lambda".into(), a.allow_any_lambda.to_string());
    args.insert("side".into(), side.as_str().to_string());
    args.insert("method".into(), a.method.method().as_str().to_string());
    args.insert("algorithm".into(), a.algorithm.algorithm().as_str().to_string());
    args.insert("subgroup".into(), a.subgroup.mode().as_str().to_string());
    args.insert("permutations".into(), a.permutations.to_string());
    args.insert("alpha".into(), a.alpha.to_string());
    args.insert("seed".into(), a.seed.to_string());
    args.insert("threads".into(), threads.map_or("auto".into(), |t| t.to_string()));
    finish_manifest(
        &a.out_dir,
        "analyze",
        args,
        vec![a.input.display().to_string()],
        outputs,
        a.seed,
        started,
    )
}

/// Matching, balance, and inference over a prepared unit pool. Writes
/// `balance.csv` and returns the report; an empty matched sample warns and
/// reports nulls rather than failing.
fn analyze_units(a: &AnalyzeArgs, units: &[Unit]) -> Result<EffectReport, Failure> {
    let method = a.method.method();
    let n_treated = units.iter().filter(|u| u.treated).count();
    let n_controls = units.len() - n_treated;

    let skeleton = EffectReport {
        method: method.as_str().to_string(),
        algorithm: a.algorithm.algorithm().as_str().to_string(),
        lambda: a.lambda,
        side: a.side.side().as_str().to_string(),
        subgroup: a.subgroup.mode().as_str().to_string(),
        n_pairs: 0,
        te: None,
        p_value: None,
        ci: None,
        n_permutations: a.permutations,
        seed: a.seed,
    };

    if n_treated == 0 || n_controls == 0 {
        eprintln!(
            "warning: no matchable sample ({n_treated} treated, {n_controls} controls); \
             reporting an empty result"
        );
        write_balance(a, units, &[])?;
        return Ok(skeleton);
    }

    let scores = match method {
        MatchMethod::Propensity => {
            let rows: Vec<Vec<f64>> = units
                .iter()
                .map(|u| covariate_values(u, a.lambda).map(|(_, v)| v).to_vec())
                .collect();
            let labels: Vec<bool> = units.iter().map(|u| u.treated).collect();
            let cfg = GbmConfig { seed: derive_seed(a.seed, STREAM_GBM), ..GbmConfig::default() };
            let model = fit(&cfg, &rows, &labels)
                .context("fitting propensity model")
                .map_err(Failure::runtime)?;
            Some(model.predict(&rows))
        }
        MatchMethod::NoBalance | MatchMethod::Mahalanobis => None,
    };

    let cfg = MatchConfig {
        method,
        algorithm: a.algorithm.algorithm(),
        lambda: a.lambda,
        seed: derive_seed(a.seed, STREAM_MATCH),
    };
    let sample = match_units(units, scores.as_deref(), &cfg)
        .context("matching")
        .map_err(Failure::runtime)?;
    write_balance(a, units, &sample.pairs)?;

    let diffs = paired_differences(units, &sample);
    if diffs.is_empty() {
        eprintln!(
            "warning: no feasible matched pairs among {n_treated} treated and \
             {n_controls} controls; reporting an empty result"
        );
        return Ok(skeleton);
    }

    let perm_seed = derive_seed(a.seed, STREAM_PERM);
    let test = permutation_test(&diffs, a.permutations, perm_seed)
        .context("permutation test")
        .map_err(Failure::runtime)?;
    let ci = invert_ci(&diffs, a.permutations, perm_seed, a.alpha)
        .context("confidence interval")
        .map_err(Failure::runtime)?;

    Ok(EffectReport {
        n_pairs: diffs.len(),
        te: Some(test.observed_mean),
        p_value: Some(test.p_value),
        ci: Some(ci),
        ..skeleton
    })
}

fn write_balance(
    a: &AnalyzeArgs,
    units: &[Unit],
    pairs: &[stopclock::matching::MatchedPair],
) -> Result<(), Failure> {
    let rows = balance_rows(units, pairs, a.lambda, a.method.method().as_str());
    let mut buf = Vec::new();
    write_balance_csv(&mut buf, &rows).map_err(ingest_failure)?;
    let path = a.out_dir.join("balance.csv");
    fs::write(&path, buf)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::runtime)
}

#[derive(Serialize)]
struct NaiveReport {
    lambda: usize,
    /// Outcomes at non-official team timeouts, from the caller's side.
    timeouts: NaiveSummary,
    /// Outcomes at ordinary possessions, from the offense's side.
    possessions: NaiveSummary,
}

fn cmd_naive(a: NaiveArgs) -> Result<(), Failure> {
    let started = Instant::now();
    check_lambda(a.lambda, a.allow_any_lambda)?;
    let games = load_games(&a.input)?;

    // Caller-perspective outcomes at team timeouts, pooled over both sides;
    // offense-perspective outcomes at possessions, each counted once.
    let mut timeout_ys = Vec::new();
    let mut possession_ys = Vec::new();
    let home_units = build_units(&games, a.lambda, Side::Home).map_err(Failure::usage)?;
    let away_units = build_units(&games, a.lambda, Side::Away).map_err(Failure::usage)?;
    for u in &away_units {
        if u.treated {
            timeout_ys.push(u.y);
        }
    }
    let kind_of = |game_id: &str, t: usize| -> InstantKind {
        games
            .iter()
            .find(|g| g.game_id == game_id)
            .map(|g| g.instants[t].kind)
            .expect("unit refers to a loaded game")
    };
    for u in &home_units {
        if u.treated {
            timeout_ys.push(u.y);
        } else if let InstantKind::Possession { offense } = kind_of(&u.game_id, u.t) {
            // Home-perspective y flips sign for away offenses.
            possession_ys.push(if offense == Side::Home { u.y } else { -u.y });
        }
    }

    if timeout_ys.is_empty() {
        return Err(Failure::runtime(anyhow!(
            "no valid non-official team timeouts in {}",
            a.input.display()
        )));
    }

    let report = NaiveReport {
        lambda: a.lambda,
        timeouts: naive_stmc_summary(
            &timeout_ys,
            a.bootstrap,
            derive_seed(a.seed, STREAM_NAIVE_TIMEOUT),
        ),
        possessions: naive_stmc_summary(
            &possession_ys,
            a.bootstrap,
            derive_seed(a.seed, STREAM_NAIVE_POSSESSION),
        ),
    };

    create_out_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("naive.json"), &report)?;
    let t_hist = fd_histogram(&timeout_ys);
    let p_hist = fd_histogram(&possession_ys);
    let mut buf = Vec::new();
    write_density_csv(&mut buf, &[("timeout", &t_hist), ("possession", &p_hist)])
        .map_err(ingest_failure)?;
    let density_path = a.out_dir.join("density.csv");
    fs::write(&density_path, buf)
        .with_context(|| format!("writing {}", density_path.display()))
        .map_err(Failure::runtime)?;

    println!(
        "naive: lambda={} timeouts n={} mean={:.4}; possessions n={} mean={:.4}",
        a.lambda,
        report.timeouts.n,
        report.timeouts.mean.unwrap_or(f64::NAN),
        report.possessions.n,
        report.possessions.mean.unwrap_or(f64::NAN),
    );

    let mut args = BTreeMap::new();
    args.insert("lambda".into(), a.lambda.to_string());
    args.insert("allow_any_lambda".into(), a.allow_any_lambda.to_string());
    args.insert("bootstrap".into(), a.bootstrap.to_string());
    args.insert("seed".into(), a.seed.to_string());
    finish_manifest(
        &a.out_dir,
        "naive",
        args,
        vec![a.input.display().to_string()],
        vec!["naive.json".into(), "density.csv".into()],
        a.seed,
        started,
    )
}
