//! `fidsearch`: cluster a feature pool, score clusters against a target set by
//! Fréchet distance, and sample a training set from the closest clusters.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 on I/O failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use fidsearch_core::clustering::{cluster_identities, KMeansParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use fidsearch_core::eval::{compare_strategies, sweep_k, Report};
use fidsearch_core::features::{
    load_features, load_identities, read_id_list, save_features, FeatureFormat, FeatureTable,
    IdentityIndex,
};
use fidsearch_core::rng::{stream_rng, Stream};
use fidsearch_core::search::{
    run_search, target_stats, SearchParams, Strategy, DEFAULT_K, DEFAULT_MIN_CLUSTER_IMAGES,
    DEFAULT_N,
};
use fidsearch_core::synth::{
    generate, standard_fixture, two_group_fixture, FixtureConfig, Population, PopulationSpec,
};
use fidsearch_core::{fid, Error as CoreError};

const THREADS_ENV: &str = "FIDSEARCH_THREADS";

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) => 1,
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}
from_core!(
    fidsearch_core::FeatureError,
    fidsearch_core::FidError,
    fidsearch_core::ClusterError,
    fidsearch_core::SearchError,
    fidsearch_core::SynthError
);

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fidsearch", version, about = "Distribution-matched training set search")]
struct Cli {
    /// Worker threads [default: $FIDSEARCH_THREADS, else all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic population (features plus identity manifest)
    Synth(SynthArgs),
    /// Run k-means over identity-averaged features
    Cluster(ClusterArgs),
    /// Print the Fréchet distance between two feature sets
    Fid(FidArgs),
    /// Search the pool for a training set matching the target
    Search(SearchArgs),
    /// Greedy-vs-random comparisons and cluster-count sweeps
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Compare greedy search with uniform sampling over several sizes and seeds
    Compare(CompareArgs),
    /// Sweep the number of clusters at a fixed sample size
    SweepK(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// Three groups in FairSeg proportions; the target is the 14.7% group
    Standard,
    /// 80/20 majority/minority split; the target is the minority
    TwoGroup,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Population spec as JSON; writes features.fsf and identities.tsv
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    spec: Option<PathBuf>,
    /// Built-in fixture; writes pool.fsf, pool.tsv, target.fsf and target.tsv
    #[arg(long, value_enum)]
    fixture: Option<FixtureKind>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Fixture seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixture feature dimension
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Fixture pool identities
    #[arg(long, default_value_t = 8000)]
    pool_size: usize,
    /// Fixture target identities
    #[arg(long, default_value_t = 300)]
    target_size: usize,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Feature file (.csv for csv, anything else binary)
    #[arg(long)]
    features: PathBuf,
    /// Identity manifest [default: one identity per image]
    #[arg(long)]
    identities: Option<PathBuf>,
    /// Number of clusters
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum Lloyd iterations
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Convergence tolerance, relative to the feature scale
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Output directory for assignment.tsv and centroids.fsf
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FidArgs {
    /// First feature file
    #[arg(long)]
    a: PathBuf,
    /// Second feature file
    #[arg(long)]
    b: PathBuf,
    /// Restrict --a to the IDs listed in this file
    #[arg(long)]
    a_ids: Option<PathBuf>,
    /// Restrict --b to the IDs listed in this file
    #[arg(long)]
    b_ids: Option<PathBuf>,
}

/// Search settings that may also come from a JSON config file.
#[derive(Debug, Args)]
struct Tuning {
    /// JSON file with defaults for k, n, seed, strategy, max_iter, tol, min_cluster_images
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum Lloyd iterations [default: 300]
    #[arg(long)]
    max_iter: Option<usize>,
    /// k-means convergence tolerance, relative to the feature scale [default: 1e-4]
    #[arg(long)]
    tol: Option<f64>,
    /// Clusters with fewer images are not scored [default: 2]
    #[arg(long)]
    min_cluster_images: Option<usize>,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Pool feature file
    #[arg(long)]
    pool: PathBuf,
    /// Pool identity manifest [default: one identity per image]
    #[arg(long)]
    identities: Option<PathBuf>,
    /// Target feature file
    #[arg(long)]
    target: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Number of clusters [default: 100]
    #[arg(long)]
    k: Option<usize>,
    /// Number of images to select [default: 100]
    #[arg(long)]
    n: Option<usize>,
    /// Root random seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// greedy (cluster-weighted) or random (uniform baseline) [default: greedy]
    #[arg(long)]
    strategy: Option<Strategy>,
    #[command(flatten)]
    tuning: Tuning,
    /// Manifest output path (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Selected-ID list output [default: the manifest path with extension .ids]
    #[arg(long)]
    ids_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Number of clusters for the greedy search [default: 100]
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated training set sizes
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000")]
    n_list: Vec<usize>,
    /// Number of seeds
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// First seed; seeds run from here upwards
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[command(flatten)]
    tuning: Tuning,
    /// Output directory for compare.csv and compare.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Comma-separated cluster counts
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    k_list: Vec<usize>,
    /// Training set size [default: 100]
    #[arg(long)]
    n: Option<usize>,
    /// Number of seeds
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed; seeds run from here upwards
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[command(flatten)]
    tuning: Tuning,
    /// Output directory for sweep_k.csv and sweep_k.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    k: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    strategy: Option<Strategy>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    min_cluster_images: Option<usize>,
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))
}

/// Flags override the config file, which overrides built-in defaults.
fn resolve_params(
    tuning: &Tuning,
    k: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    strategy: Option<Strategy>,
) -> Result<SearchParams> {
    let cfg = read_config(tuning.config.as_deref())?;
    let params = SearchParams {
        strategy: strategy.or(cfg.strategy).unwrap_or(Strategy::Greedy),
        k: k.or(cfg.k).unwrap_or(DEFAULT_K),
        n: n.or(cfg.n).unwrap_or(DEFAULT_N),
        seed: seed.or(cfg.seed).unwrap_or(0),
        max_iter: tuning.max_iter.or(cfg.max_iter).unwrap_or(DEFAULT_MAX_ITER),
        tol: tuning.tol.or(cfg.tol).unwrap_or(DEFAULT_TOL),
        min_cluster_images: tuning
            .min_cluster_images
            .or(cfg.min_cluster_images)
            .unwrap_or(DEFAULT_MIN_CLUSTER_IMAGES),
    };
    if params.k == 0 {
        return Err(CliError::Invalid("--k must be at least 1".into()));
    }
    if params.n == 0 {
        return Err(CliError::Invalid("--n must be at least 1".into()));
    }
    if params.max_iter == 0 {
        return Err(CliError::Invalid("--max-iter must be at least 1".into()));
    }
    if !(params.tol.is_finite() && params.tol >= 0.0) {
        return Err(CliError::Invalid("--tol must be a non-negative number".into()));
    }
    Ok(params)
}

fn load_table(path: &Path) -> Result<FeatureTable> {
    Ok(load_features(path, FeatureFormat::from_path(path))?)
}

fn load_pool(inputs: &Inputs) -> Result<(FeatureTable, IdentityIndex, FeatureTable)> {
    let pool = load_table(&inputs.pool)?;
    let index = load_identities(inputs.identities.as_deref(), &pool)?;
    let target = load_table(&inputs.target)?;
    Ok((pool, index, target))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn write_population(pop: &Population, dir: &Path, stem: &str) -> Result<()> {
    save_features(&pop.table, &dir.join(format!("{stem}.fsf")), FeatureFormat::Binary)?;
    pop.index.save(&pop.table, &dir.join(format!("{stem}.tsv")))?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    create_dir(&args.out)?;
    if let Some(spec_path) = &args.spec {
        let text = fs::read_to_string(spec_path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", spec_path.display())))?;
        let spec: PopulationSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("spec {}: {e}", spec_path.display())))?;
        let pop = generate(&spec)?;
        save_features(&pop.table, &args.out.join("features.fsf"), FeatureFormat::Binary)?;
        pop.index.save(&pop.table, &args.out.join("identities.tsv"))?;
        eprintln!("wrote {} images, {} identities", pop.table.len(), pop.index.len());
        return Ok(());
    }
    if args.dim < 3 {
        return Err(CliError::Invalid("--dim must be at least 3 for fixtures".into()));
    }
    if args.pool_size == 0 || args.target_size < 2 {
        return Err(CliError::Invalid(
            "--pool-size must be positive and --target-size at least 2".into(),
        ));
    }
    let cfg = FixtureConfig {
        pool_identities: args.pool_size,
        target_identities: args.target_size,
        dim: args.dim,
        seed: args.seed,
        ..Default::default()
    };
    let fixture = match args.fixture.expect("clap enforces --spec or --fixture") {
        FixtureKind::Standard => standard_fixture(&cfg)?,
        FixtureKind::TwoGroup => two_group_fixture(&cfg)?,
    };
    write_population(&fixture.pool, &args.out, "pool")?;
    write_population(&fixture.target, &args.out, "target")?;
    eprintln!(
        "wrote pool ({} images) and target ({} images)",
        fixture.pool.table.len(),
        fixture.target.table.len()
    );
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let table = load_table(&args.features)?;
    let index = load_identities(args.identities.as_deref(), &table)?;
    let params = KMeansParams {
        k: args.k,
        seed: args.seed,
        max_iter: args.max_iter,
        tol: args.tol,
    };
    let mut rng = stream_rng(args.seed, Stream::Clustering);
    let clustering = cluster_identities(&table, &index, &params, &mut rng)?;
    create_dir(&args.out)?;
    clustering.save(&args.out)?;
    eprintln!(
        "k={} inertia={} iterations={} converged={}",
        clustering.k(),
        clustering.inertia,
        clustering.iterations,
        clustering.converged
    );
    Ok(())
}

fn restricted(path: &Path, ids: Option<&Path>) -> Result<FeatureTable> {
    let table = load_table(path)?;
    match ids {
        None => Ok(table),
        Some(list) => Ok(table.select_ids(&read_id_list(list)?)?),
    }
}

fn cmd_fid(args: FidArgs) -> Result<()> {
    let a = restricted(&args.a, args.a_ids.as_deref())?;
    let b = restricted(&args.b, args.b_ids.as_deref())?;
    let sa = target_stats(&a)?;
    let sb = target_stats(&b)?;
    let value = fid(&sa, &sb)?;
    println!("{value}");
    Ok(())
}

fn input_echo(inputs: &Inputs) -> BTreeMap<String, String> {
    let mut echo = BTreeMap::new();
    echo.insert("pool".into(), inputs.pool.display().to_string());
    echo.insert("target".into(), inputs.target.display().to_string());
    if let Some(i) = &inputs.identities {
        echo.insert("identities".into(), i.display().to_string());
    }
    echo
}

fn cmd_search(args: SearchArgs) -> Result<()> {
    let params = resolve_params(&args.tuning, args.k, args.n, args.seed, args.strategy)?;
    let (pool, index, target) = load_pool(&args.inputs)?;
    let outcome = run_search(&pool, &index, &target, &params, input_echo(&args.inputs))?;
    write(&args.out, &outcome.manifest.to_json())?;
    let ids_out = args
        .ids_out
        .unwrap_or_else(|| args.out.with_extension("ids"));
    write(&ids_out, &outcome.manifest.ids_text())?;
    eprintln!(
        "selected {} images from {} identities",
        outcome.manifest.selected_ids.len(),
        outcome.selection.draws.len()
    );
    Ok(())
}

fn seed_list(base: u64, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(CliError::Invalid("--seeds must be at least 1".into()));
    }
    Ok((base..base + count).collect())
}

fn write_report(report: &Report, dir: &Path, stem: &str) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join(format!("{stem}.csv")), &report.to_csv())?;
    write(&dir.join(format!("{stem}.json")), &report.summary_json())?;
    for a in &report.aggregates {
        eprintln!(
            "{} k={} n={}: mean {:.4} std {:.4} over {} runs",
            a.strategy, a.k, a.n, a.mean, a.std, a.runs
        );
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let base = resolve_params(&args.tuning, args.k, None, None, None)?;
    if args.n_list.contains(&0) {
        return Err(CliError::Invalid("--n-list entries must be at least 1".into()));
    }
    let seeds = seed_list(args.base_seed, args.seeds)?;
    let (pool, index, target) = load_pool(&args.inputs)?;
    let report = compare_strategies(&pool, &index, &target, &base, &args.n_list, &seeds)?;
    write_report(&report, &args.out_dir, "compare")
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = resolve_params(&args.tuning, None, args.n, None, None)?;
    if args.k_list.contains(&0) {
        return Err(CliError::Invalid("--k-list entries must be at least 1".into()));
    }
    let seeds = seed_list(args.base_seed, args.seeds)?;
    let (pool, index, target) = load_pool(&args.inputs)?;
    let report = sweep_k(&pool, &index, &target, &base, &args.k_list, base.n, &seeds)?;
    write_report(&report, &args.out_dir, "sweep_k")
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Invalid(format!("{THREADS_ENV}={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("cannot configure threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Fid(args) => cmd_fid(args),
        Command::Search(args) => cmd_search(args),
        Command::Eval { command } => match command {
            EvalCommand::Compare(args) => cmd_compare(args),
            EvalCommand::SweepK(args) => cmd_sweep(args),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
