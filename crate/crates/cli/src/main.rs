#![allow(clippy::single_range_in_vec_init)]

mod commands;
mod config;
mod fit;
mod output;
mod specs;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use vpem::consensus::{ConsensusConfig, ConsensusMode};
use vpem::gmm::{EmOptions, InitStrategy, StopReason, StopSpec};

use config::{DataSource, ExperimentConfig, FileConfig, Mode, Scheme, SyntheticSpec};

/// Simulator for EM on Gaussian mixtures over vertically partitioned data:
/// centralized, federated (star) and decentralized (consensus over a graph).
#[derive(Parser)]
#[command(name = "vpem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a random ground-truth mixture.
    Generate(GenerateArgs),
    /// Assign features to agents.
    Partition(PartitionArgs),
    /// Build a graph and cluster it into h-hop hubs.
    ClusterGraph(ClusterGraphArgs),
    /// Fit a mixture in one of the three modes.
    Fit(Box<FitArgs>),
    /// Clustering accuracy of a fit against labels.
    Eval(EvalArgs),
    /// Merge trace files into one CSV for plotting.
    Trajectories(TrajectoriesArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Minimum distance between means, in units of the typical cluster radius.
    #[arg(long, allow_negative_numbers = true)]
    separation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    agents: usize,
    #[arg(long, value_enum, default_value = "even")]
    scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClusterGraphArgs {
    /// One of: cycle:N, star:N, complete:N, geometric:N:RADIUS,
    /// geometric-degree:N:DEGREE, scale-free:N:M, file:PATH.
    #[arg(long)]
    graph: String,
    #[arg(long, default_value_t = 0)]
    hops: usize,
    #[arg(long)]
    deterministic_ties: bool,
    /// metropolis or laplacian:ALPHA.
    #[arg(long)]
    weights: Option<String>,
    /// Number of features for the hub feature table (default: one per agent).
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum, default_value = "even")]
    scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// TOML file with any of the settings below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// CSV dataset.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic data as K:D:M[:SEPARATION], drawn with --seed.
    #[arg(long)]
    synthetic: Option<SyntheticSpec>,
    /// Label column of the CSV: `last`, a 0-based index or a header name.
    #[arg(long)]
    label_column: Option<String>,
    /// Center and scale every feature before fitting.
    #[arg(long)]
    standardize: bool,
    /// Communication graph (decentralized mode); see `cluster-graph --help`.
    #[arg(long)]
    graph: Option<String>,
    /// metropolis or laplacian:ALPHA.
    #[arg(long)]
    weights: Option<String>,
    /// Number of clients (fl) or of feature blocks (centralized).
    #[arg(long)]
    agents: Option<usize>,
    /// Feature assignment written by `partition`.
    #[arg(long)]
    assignment: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// kmeanspp or random-responsibility.
    #[arg(long)]
    init: Option<String>,
    /// Examples per incremental E-step.
    #[arg(long)]
    batch: Option<usize>,
    /// Independent initializations; the highest final LL is kept.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    deterministic_ties: bool,
    #[arg(long)]
    reseed_empty: bool,
    #[arg(long)]
    consensus_rounds: Option<usize>,
    /// Replace finite-round consensus with the exact network average.
    #[arg(long)]
    consensus_exact: bool,
    #[arg(long)]
    tol_abs: Option<f64>,
    #[arg(long)]
    tol_rel: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    reg_scale: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    fit_dir: PathBuf,
    /// CSV with the true labels (usually the fitted dataset).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "last")]
    label_column: String,
    /// Also run the k-means baseline on the data.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrajectoriesArgs {
    /// `trace.jsonl` files written by `fit`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "trajectories.csv")]
    out: PathBuf,
    /// Merge traces of different modes.
    #[arg(long)]
    force: bool,
}

fn parse_init(s: &str) -> Result<InitStrategy> {
    Ok(match s {
        "kmeanspp" | "kmeanspp-means" | "kmeanspp_means" => InitStrategy::KmeansppMeans,
        "random-responsibility" | "random_responsibility" => InitStrategy::RandomResponsibility,
        _ => bail!("unknown init `{s}` (kmeanspp or random-responsibility)"),
    })
}

fn resolve_fit(a: FitArgs) -> Result<ExperimentConfig> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let data = match (a.data, a.synthetic, file.data, file.synthetic) {
        (Some(p), _, _, _) => DataSource::Csv(p),
        (None, Some(s), _, _) => DataSource::Synthetic(s),
        (None, None, Some(p), _) => DataSource::Csv(p),
        (None, None, None, Some(s)) => DataSource::Synthetic(s),
        _ => bail!("no data: give --data PATH or --synthetic K:D:M"),
    };
    let defaults = StopSpec::default();
    let rounds = a
        .consensus_rounds
        .or(file.consensus.rounds)
        .unwrap_or(ConsensusConfig::default().rounds);
    let exact = a.consensus_exact || file.consensus.exact.unwrap_or(false);
    let init = match a.init {
        Some(s) => parse_init(&s)?,
        None => file.init.unwrap_or_default(),
    };
    let k = match (a.k.or(file.k), &data) {
        (Some(k), _) => k,
        (None, DataSource::Synthetic(s)) => s.k,
        (None, DataSource::Csv(_)) => bail!("--k is required with CSV data"),
    };
    Ok(ExperimentConfig {
        mode: a.mode.or(file.mode).unwrap_or(Mode::Centralized),
        data,
        label_column: a.label_column.or(file.label_column),
        standardize: a.standardize || file.standardize.unwrap_or(false),
        graph: a.graph.or(file.graph),
        weights: a.weights.or(file.weights),
        agents: a.agents.or(file.agents),
        assignment: a.assignment.or(file.assignment),
        scheme: a.scheme.or(file.scheme).unwrap_or(Scheme::Even),
        hops: a.hops.or(file.hops).unwrap_or(0),
        k,
        seed: a.seed.or(file.seed).unwrap_or(0),
        init,
        batch: a.batch.or(file.batch),
        restarts: a.restarts.or(file.restarts).unwrap_or(1),
        deterministic_ties: a.deterministic_ties || file.deterministic_ties.unwrap_or(false),
        consensus: ConsensusConfig {
            rounds,
            mode: if exact {
                ConsensusMode::ExactOracle
            } else {
                ConsensusMode::Iterative
            },
        },
        stop: StopSpec {
            tol_abs: a.tol_abs.or(file.stop.tol_abs).unwrap_or(defaults.tol_abs),
            tol_rel: a.tol_rel.or(file.stop.tol_rel).unwrap_or(defaults.tol_rel),
            max_iters: a.max_iters.or(file.stop.max_iters).unwrap_or(defaults.max_iters),
        },
        opts: EmOptions {
            reg_scale: a.reg_scale.or(file.reg_scale).unwrap_or(EmOptions::default().reg_scale),
            reseed_empty: a.reseed_empty || file.reseed_empty.unwrap_or(false),
        },
        out_dir: a.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from(".")),
    })
}

fn generate(a: GenerateArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let base = file.synthetic;
    let pick = |flag: Option<usize>, name: &str, from: fn(&SyntheticSpec) -> usize| -> Result<usize> {
        match flag.or(base.as_ref().map(from)) {
            Some(v) => Ok(v),
            None => bail!("--{name} is required"),
        }
    };
    let spec = SyntheticSpec {
        k: pick(a.k, "k", |s| s.k)?,
        d: pick(a.d, "d", |s| s.d)?,
        m: pick(a.m, "m", |s| s.m)?,
        separation: a.separation.or(base.map(|s| s.separation)).unwrap_or(2.0),
    };
    let out = a.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("."));
    commands::generate(&spec, a.seed.or(file.seed).unwrap_or(0), &out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => generate(a)?,
        Command::Partition(a) => commands::partition(a.d, a.agents, a.scheme, a.seed, &a.out_dir)?,
        Command::ClusterGraph(a) => commands::cluster_graph(&commands::ClusterGraphArgs {
            graph: &a.graph,
            hops: a.hops,
            deterministic_ties: a.deterministic_ties,
            weights: a.weights.as_deref(),
            d: a.d,
            scheme: a.scheme,
            seed: a.seed,
            out: &a.out_dir,
        })?,
        Command::Fit(a) => {
            let cfg = resolve_fit(*a)?;
            return Ok(match fit::run(&cfg)? {
                StopReason::LlPlateau => ExitCode::SUCCESS,
                StopReason::MaxIters => ExitCode::from(2),
            });
        }
        Command::Eval(a) => commands::eval(&commands::EvalArgs {
            fit_dir: &a.fit_dir,
            data: &a.data,
            label_column: &a.label_column,
            standardize: a.standardize,
            baseline: a.baseline,
            restarts: a.restarts,
            seed: a.seed,
        })?,
        Command::Trajectories(a) => commands::trajectories(&a.traces, &a.out, a.force)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // usage errors exit 1 like any other error; 2 is reserved for max_iters
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
