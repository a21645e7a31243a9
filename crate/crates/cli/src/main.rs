//! `ccmeans`: batch front end for cardinality-constrained clustering.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 solver
//! failure, 4 resource limit (enumeration cap, problem size, time budget).

use anyhow::Context;
use ccmeans_core::experiment::{
    elbow_scan, execute_method, CardinalitySource, CsvOptions, DatasetSource, ElbowRule, ExperimentConfig,
    LoadedData, Method, Report,
};
use ccmeans_core::oracle::enumerate_optimal;
use ccmeans_core::synth::{generate_separated_instance, generate_stochastic_balls, zscore};
use ccmeans_core::relax::export::{to_json, to_sdpa};
use ccmeans_core::{build_relaxation, distance_matrix, gram_matrix, CardinalitySpec, Error, RelaxationKind, SolverConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "ccmeans", version, about = "Cardinality-constrained K-means with outlier detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster one dataset with one method.
    Cluster(ClusterArgs),
    /// Run every method of an experiment config file and report bounds.
    Bench(BenchArgs),
    /// Scan outlier counts and pick the elbow of the objective curve.
    Elbow(ElbowArgs),
    /// Emit a generated instance as CSV.
    Synth(SynthArgs),
    /// Exact optimum of a tiny instance by enumeration.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    data: PathBuf,
    /// Name (or 0-based index) of the label column.
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    /// Standardize every feature to mean 0 and standard deviation 1.
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn source(&self) -> DatasetSource {
        DatasetSource::Csv {
            path: self.data.clone(),
            csv: CsvOptions {
                label_column: self.label_column.clone(),
                delimiter: self.delimiter,
                header: !self.no_header,
            },
            standardize: self.standardize,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Solver stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Wall-clock budget per solve, in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
}

impl SolveArgs {
    fn solver(&self) -> SolverConfig {
        let mut cfg = SolverConfig { seed: self.seed, ..SolverConfig::default() };
        if let Some(t) = self.tol {
            cfg.tolerance = Some(t);
        }
        cfg
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cardinalities: `labels`, `balanced:K`, `relative:W1,W2[+N0]` or `N1,N2,...[+N0]`.
    #[arg(long)]
    spec: String,
    /// Method, e.g. `R_LP_b+round`, `R_SDP+round`, `R_LP_ob+round`, `bennett:10`, `oracle`.
    #[arg(long, default_value = "R_LP_b+round")]
    kind: String,
    #[command(flatten)]
    solve: SolveArgs,
    /// Write the JSON result here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the relaxation program: SDPA sparse for `.dat-s`, JSON otherwise.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Replace the config's method list (comma separated).
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ElbowArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Relative cluster sizes of the regular points, e.g. `1,1,1`.
    #[arg(long)]
    spec: String,
    /// Outlier relaxation to solve for each n0.
    #[arg(long, default_value = "R_LP_ob")]
    kind: String,
    /// Outlier counts to scan.
    #[arg(long, value_delimiter = ',', default_value = "0,3,6,9,12")]
    grid: Vec<usize>,
    #[arg(long, value_enum, default_value_t = RuleArg::SecondDifference)]
    rule: RuleArg,
    #[command(flatten)]
    solve: SolveArgs,
    /// Write the curve as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    SecondDifference,
    LargestDrop,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    /// Clusters satisfying the perfect-separation assumptions.
    Separated,
    /// Unit balls at the vertices of a regular simplex.
    Balls,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Generator::Separated)]
    kind: Generator,
    /// Cluster sizes: `N1,N2,...` (balls) or `K:n` (separated).
    #[arg(long, default_value = "3:5")]
    spec: String,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Separation factor (separated) or center distance (balls).
    #[arg(long, default_value_t = 2.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    standardize: bool,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    spec: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error paired with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = error.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(2, exit_code);
        Failure { code, error }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver(_) | Error::Precondition { .. } | Error::DegenerateCluster(_) => 3,
        Error::ResourceLimit(_) => 4,
        _ => 2,
    }
}

fn resource(msg: String) -> Failure {
    Failure { code: 4, error: anyhow::anyhow!(msg) }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cluster(a) => cluster(a),
        Command::Bench(a) => bench(a),
        Command::Elbow(a) => elbow(a),
        Command::Synth(a) => synth(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn write_out(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cluster(a: ClusterArgs) -> CmdResult {
    let method: Method = a.kind.parse()?;
    let cardinality: CardinalitySource = a.spec.parse()?;
    let config = ExperimentConfig {
        dataset: a.data.source(),
        cardinality,
        methods: vec![method.clone()],
        solver: a.solve.solver(),
        seed: a.solve.seed,
        time_budget_secs: a.solve.time_budget,
        workers: 1,
    };
    config.validate()?;
    let loaded = config.dataset.load()?;
    let spec = config.cardinality.resolve(loaded.dataset.len(), loaded.labels.as_deref())?;
    if let Some(path) = &a.export {
        export_program(&method, &loaded, &spec, path)?;
    }
    let (row, clustering) = execute_method(&method, &config, &loaded, &spec)?;
    println!("{}", serde_json::to_string_pretty(&row)?);
    let labels: Option<Vec<i64>> =
        clustering.map(|c| c.labels().iter().map(|l| l.map_or(-1, |v| v as i64)).collect());
    if let Some(path) = &a.out {
        let doc = serde_json::json!({ "row": row, "labels": labels, "sizes": spec.sizes(), "outliers": spec.outlier_count() });
        write_out(path, &serde_json::to_string_pretty(&doc)?)?;
    }
    if row.status == "timeout" {
        return Err(resource(format!("{method} exceeded the time budget")));
    }
    Ok(())
}

fn export_program(method: &Method, loaded: &LoadedData, spec: &CardinalitySpec, path: &Path) -> CmdResult {
    let kind = match method {
        Method::Relaxation { kind } | Method::Rounding { kind, .. } => *kind,
        other => return Err(Error::Config(format!("{other} has no relaxation to export")).into()),
    };
    let data = &loaded.dataset;
    let program = build_relaxation(kind, &distance_matrix(data), &gram_matrix(data), spec)?;
    let text = if path.extension().is_some_and(|e| e == "dat-s") { to_sdpa(&program) } else { to_json(&program)? };
    write_out(path, &text)
}

fn bench(a: BenchArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.spec.display())))?;
    if let Some(k) = &a.kind {
        config.methods = k.split(',').map(str::parse).collect::<Result<_, _>>()?;
    }
    if let Some(s) = a.seed {
        config.seed = s;
        config.solver.seed = s;
    }
    if let Some(t) = a.tol {
        config.solver.tolerance = Some(t);
    }
    if a.time_budget.is_some() {
        config.time_budget_secs = a.time_budget;
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    let report: Report = ccmeans_core::run_experiment(&config)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.out {
        write_out(path, &serde_json::to_string_pretty(&report)?)?;
    }
    let failed = report.rows.iter().filter(|r| r.status == "error").count();
    if failed > 0 {
        log::warn!("{failed} of {} methods failed", report.rows.len());
    }
    Ok(())
}

fn elbow(a: ElbowArgs) -> CmdResult {
    let kind: RelaxationKind = a.kind.parse()?;
    let weights: Vec<usize> = a
        .spec
        .split(',')
        .map(|w| w.trim().parse().map_err(|_| Error::Config(format!("bad relative size '{w}'"))))
        .collect::<Result<_, _>>()?;
    let LoadedData { dataset, .. } = a.data.source().load()?;
    let mut solver = a.solve.solver();
    solver.time_limit = a.solve.time_budget.map(Duration::from_secs_f64);
    let rule = match a.rule {
        RuleArg::SecondDifference => ElbowRule::SecondDifference,
        RuleArg::LargestDrop => ElbowRule::LargestDrop,
    };
    let result = elbow_scan(&dataset, &weights, &a.grid, kind, &solver, rule)?;
    for p in &result.points {
        println!("n0={:<5} objective={:<14.6} {} ({})", p.n0, p.objective, p.status, p.kind);
    }
    if !result.skipped.is_empty() {
        println!("skipped (sizes not integral): {:?}", result.skipped);
    }
    println!("chosen n0 = {}", result.chosen_n0);
    if let Some(path) = &a.out {
        write_out(path, &result.to_csv())?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let bad = || Error::Config(format!("cannot parse sizes '{}'", a.spec));
    let mut inst = match a.kind {
        Generator::Separated => {
            let (k, n) = a.spec.split_once(':').ok_or_else(bad)?;
            let k = k.trim().parse().map_err(|_| bad())?;
            let n = n.trim().parse().map_err(|_| bad())?;
            generate_separated_instance(k, n, a.outliers, a.dim, a.scale, a.seed)?
        }
        Generator::Balls => {
            if a.outliers > 0 {
                return Err(Error::Config("the ball generator has no outliers".into()).into());
            }
            let sizes: Vec<usize> =
                a.spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
            generate_stochastic_balls(&sizes, a.scale, a.dim, a.seed)?
        }
    };
    if a.standardize {
        inst.dataset = zscore(&inst.dataset)?;
    }
    log::info!("separation certificate: {:?}", inst.certificate);
    match &a.out {
        Some(path) => {
            let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            inst.write_csv(f)?;
        }
        None => inst.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> CmdResult {
    let cardinality: CardinalitySource = a.spec.parse()?;
    let loaded = a.data.source().load()?;
    let spec = cardinality.resolve(loaded.dataset.len(), loaded.labels.as_deref())?;
    let r = enumerate_optimal(&loaded.dataset, &spec)?;
    println!("optimal cost {:.10} over {} partitions ({} evaluated)", r.cost, r.partitions, r.leaves);
    let labels: Vec<i64> = r.clustering.labels().iter().map(|l| l.map_or(-1, |v| v as i64)).collect();
    println!("labels {labels:?}");
    if let Some(path) = &a.out {
        let doc = serde_json::json!({ "cost": r.cost, "labels": labels, "partitions": r.partitions.to_string(), "leaves": r.leaves });
        write_out(path, &serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}
