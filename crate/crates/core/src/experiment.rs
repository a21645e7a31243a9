//! Experiment orchestration: CSV ingestion, method runs with bound/gap
//! reporting, recovery accuracy, and elbow scans over the outlier count.

use crate::error::{Error, Result};
use crate::heuristics::multistart_bennett;
use crate::model::{distance_matrix, gram_matrix, solve_assignment, CardinalitySpec, Clustering, DataSet};
use crate::oracle::enumerate_optimal;
use crate::relax::{build_relaxation, RelaxationKind};
use crate::rounding::{relative_gap, round, RoundingConfig};
use crate::solver::{solve, SolverConfig, SolverStatus};
use crate::synth::{generate_separated_instance, generate_stochastic_balls, zscore};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

/// Label value that marks a point as an outlier.
pub const OUTLIER_LABEL: &str = "-1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    /// Column holding class labels: a header name, or a 0-based index.
    pub label_column: Option<String>,
    pub delimiter: char,
    pub header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { label_column: None, delimiter: ',', header: true }
    }
}

/// Points read from a CSV file, with optional class labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ingested {
    pub dataset: DataSet,
    pub feature_names: Vec<String>,
    /// Class id per point; `None` for rows labelled `-1`.
    pub labels: Option<Vec<Option<usize>>>,
    /// Raw label of each class id.
    pub label_names: Vec<String>,
}

impl Ingested {
    /// Occurrences of each class id, in id order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_names.len()];
        for l in self.labels.iter().flatten().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().filter(|v| v.is_none()).count())
    }
}

pub fn ingest_csv(path: &Path, options: &CsvOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, options)
}

/// Row numbers in errors are 1-based file lines, the header included.
pub fn ingest_reader<R: Read>(reader: R, options: &CsvOptions) -> Result<Ingested> {
    if !options.delimiter.is_ascii() {
        return Err(Error::Config(format!("delimiter '{}' is not ASCII", options.delimiter)));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter as u8)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let mut line = 0usize;
    let mut next = |line: &mut usize| -> Option<Result<csv::StringRecord>> {
        records.next().map(|r| {
            *line += 1;
            r.map_err(|e| Error::Format(format!("CSV line {line}: {e}")))
        })
    };
    let mut pending = None;
    let names: Vec<String> = if options.header {
        let h = next(&mut line).ok_or_else(|| Error::Format("empty CSV file".into()))??;
        h.iter().map(|s| s.trim().to_string()).collect()
    } else {
        let first = next(&mut line).ok_or_else(|| Error::Format("empty CSV file".into()))??;
        let names = (0..first.len()).map(|j| j.to_string()).collect();
        pending = Some(first);
        names
    };
    let label_idx = match &options.label_column {
        None => None,
        Some(c) => Some(
            names
                .iter()
                .position(|n| n == c)
                .or_else(|| c.parse::<usize>().ok().filter(|&j| j < names.len()))
                .ok_or_else(|| Error::Config(format!("label column '{c}' not found")))?,
        ),
    };
    let feature_cols: Vec<usize> = (0..names.len()).filter(|&j| Some(j) != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(Error::Format("no feature columns".into()));
    }
    let mut points = Vec::new();
    let mut raw_labels = Vec::new();
    let mut row_no = if pending.is_some() { 1 } else { line };
    let mut handle = |rec: csv::StringRecord, row: usize| -> Result<()> {
        if rec.len() == 1 && rec[0].trim().is_empty() {
            return Ok(());
        }
        if rec.len() != names.len() {
            return Err(Error::Ingest {
                row,
                column: names.get(rec.len()).cloned().unwrap_or_else(|| "?".into()),
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let mut p = Vec::with_capacity(feature_cols.len());
        for &j in &feature_cols {
            let cell = rec[j].trim();
            let err = |message: &str| Error::Ingest { row, column: names[j].clone(), message: message.into() };
            if cell.is_empty() {
                return Err(err("missing value"));
            }
            let v: f64 = cell.parse().map_err(|_| err(&format!("non-numeric value '{cell}'")))?;
            if !v.is_finite() {
                return Err(err("non-finite value"));
            }
            p.push(v);
        }
        points.push(p);
        if let Some(l) = label_idx {
            let cell = rec[l].trim();
            if cell.is_empty() {
                return Err(Error::Ingest { row, column: names[l].clone(), message: "missing label".into() });
            }
            raw_labels.push(cell.to_string());
        }
        Ok(())
    };
    if let Some(first) = pending {
        handle(first, 1)?;
    }
    while let Some(rec) = next(&mut row_no) {
        handle(rec?, row_no)?;
    }
    if points.is_empty() {
        return Err(Error::Format("CSV file has no data rows".into()));
    }
    let (labels, label_names) = match label_idx {
        None => (None, Vec::new()),
        Some(_) => {
            let (l, n) = encode_labels(&raw_labels);
            (Some(l), n)
        }
    };
    Ok(Ingested {
        dataset: DataSet::new(points)?,
        feature_names: feature_cols.iter().map(|&j| names[j].clone()).collect(),
        labels,
        label_names,
    })
}

/// Class ids follow numeric order when every label is an integer, string
/// order otherwise.
fn encode_labels(raw: &[String]) -> (Vec<Option<usize>>, Vec<String>) {
    let mut names: Vec<String> = raw.iter().filter(|s| *s != OUTLIER_LABEL).cloned().collect();
    names.sort();
    names.dedup();
    if names.iter().all(|s| s.parse::<i64>().is_ok()) {
        names.sort_by_key(|s| s.parse::<i64>().unwrap());
    }
    let labels = raw
        .iter()
        .map(|s| if s == OUTLIER_LABEL { None } else { names.iter().position(|n| n == s) })
        .collect();
    (labels, names)
}

/// Fraction of points whose predicted group matches the true one under the
/// best one-to-one relabelling of clusters. Outliers only match outliers.
pub fn recovery_accuracy(predicted: &Clustering, truth: &[Option<usize>]) -> Result<f64> {
    let pred = predicted.labels();
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let kp = predicted.k();
    let kt = truth.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
    let s = kp.max(kt).max(1);
    let mut confusion = DMatrix::<f64>::zeros(s, s);
    let mut outlier_hits = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (Some(a), Some(b)) => confusion[(*a, *b)] += 1.0,
            (None, None) => outlier_hits += 1,
            _ => {}
        }
    }
    let best = solve_assignment(&(-&confusion), &vec![1; s])?;
    let matched = -best.objective;
    Ok((matched.round() as usize + outlier_hits) as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        csv: CsvOptions,
        /// Standardize features before clustering.
        #[serde(default)]
        standardize: bool,
    },
    Separated { k: usize, n: usize, outliers: usize, dim: usize, margin: f64, seed: u64 },
    Balls { sizes: Vec<usize>, delta: f64, dim: usize, seed: u64 },
}

/// A loaded dataset with its labels, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: DataSet,
    pub labels: Option<Vec<Option<usize>>>,
}

impl DatasetSource {
    pub fn load(&self) -> Result<LoadedData> {
        match self {
            DatasetSource::Csv { path, csv, standardize } => {
                let ing = ingest_csv(path, csv)?;
                let dataset = if *standardize { zscore(&ing.dataset)? } else { ing.dataset };
                Ok(LoadedData { dataset, labels: ing.labels })
            }
            DatasetSource::Separated { k, n, outliers, dim, margin, seed } => {
                let inst = generate_separated_instance(*k, *n, *outliers, *dim, *margin, *seed)?;
                Ok(LoadedData { labels: Some(inst.planted.labels()), dataset: inst.dataset })
            }
            DatasetSource::Balls { sizes, delta, dim, seed } => {
                let inst = generate_stochastic_balls(sizes, *delta, *dim, *seed)?;
                Ok(LoadedData { labels: Some(inst.planted.labels()), dataset: inst.dataset })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CardinalitySource {
    Explicit {
        sizes: Vec<usize>,
        #[serde(default)]
        outliers: usize,
    },
    /// Class counts of the label column; `-1` rows are outliers.
    FromLabels,
    Balanced { k: usize },
    /// Sizes proportional to `weights` over the `N - outliers` regular points.
    Relative {
        weights: Vec<usize>,
        #[serde(default)]
        outliers: usize,
    },
}

impl CardinalitySource {
    pub fn resolve(&self, n: usize, labels: Option<&[Option<usize>]>) -> Result<CardinalitySpec> {
        let spec = match self {
            CardinalitySource::Explicit { sizes, outliers } => CardinalitySpec::new(sizes.clone(), *outliers)?,
            CardinalitySource::FromLabels => {
                let labels = labels.ok_or_else(|| Error::Config("cardinalities from labels need a label column".into()))?;
                let k = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
                let mut sizes = vec![0; k];
                for l in labels.iter().flatten() {
                    sizes[*l] += 1;
                }
                CardinalitySpec::new(sizes, labels.iter().filter(|l| l.is_none()).count())?
            }
            CardinalitySource::Balanced { k } => {
                if *k == 0 || !n.is_multiple_of(*k) {
                    return Err(Error::Config(format!("{n} points cannot form {k} equal clusters")));
                }
                CardinalitySpec::balanced(*k, n / k)?
            }
            CardinalitySource::Relative { weights, outliers } => {
                let sizes = proportional_sizes(weights, n.saturating_sub(*outliers))
                    .ok_or_else(|| Error::Config(format!("weights {weights:?} do not divide {} points", n.saturating_sub(*outliers))))?;
                CardinalitySpec::new(sizes, *outliers)?
            }
        };
        spec.check_total(n).map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// Accepts `labels`, `balanced:K`, `relative:W1,W2,...[+N0]` and
/// `N1,N2,...[+N0]`, where `+N0` sets the outlier count.
impl FromStr for CardinalitySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse cardinality spec '{s}'"));
        let list = |t: &str| -> Result<(Vec<usize>, usize)> {
            let (body, n0) = match t.split_once('+') {
                Some((b, o)) => (b, o.trim().parse().map_err(|_| bad())?),
                None => (t, 0),
            };
            let v = body.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
            Ok((v, n0))
        };
        if s.eq_ignore_ascii_case("labels") {
            Ok(CardinalitySource::FromLabels)
        } else if let Some(k) = s.strip_prefix("balanced:") {
            Ok(CardinalitySource::Balanced { k: k.trim().parse().map_err(|_| bad())? })
        } else if let Some(w) = s.strip_prefix("relative:") {
            let (weights, outliers) = list(w)?;
            Ok(CardinalitySource::Relative { weights, outliers })
        } else {
            let (sizes, outliers) = list(s)?;
            Ok(CardinalitySource::Explicit { sizes, outliers })
        }
    }
}

/// Integral sizes proportional to `weights` summing to `m`, if they exist
/// and are all positive.
fn proportional_sizes(weights: &[usize], m: usize) -> Option<Vec<usize>> {
    let total: usize = weights.iter().sum();
    if total == 0 || !m.is_multiple_of(total) || weights.contains(&0) {
        return None;
    }
    let unit = m / total;
    (unit > 0).then(|| weights.iter().map(|w| w * unit).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Method {
    /// Lower bound from one relaxation.
    Relaxation { kind: RelaxationKind },
    /// Relaxation followed by its rounding scheme.
    Rounding {
        kind: RelaxationKind,
        #[serde(default)]
        lloyd_pass: bool,
    },
    /// Best of `runs` k-means++ seeded local searches.
    Bennett { runs: usize },
    /// Exhaustive search (tiny instances only).
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Relaxation { kind } => write!(f, "{kind}"),
            Method::Rounding { kind, lloyd_pass: false } => write!(f, "{kind}+round"),
            Method::Rounding { kind, lloyd_pass: true } => write!(f, "{kind}+round+lloyd"),
            Method::Bennett { runs } => write!(f, "bennett:{runs}"),
            Method::Oracle => f.write_str("oracle"),
        }
    }
}

/// Parses the names produced by `Display`: `R_SDP_b`, `R_LP_b+round`,
/// `R_LP_b+round+lloyd`, `bennett:10` (or `bennett`), `oracle`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("oracle") {
            return Ok(Method::Oracle);
        }
        if let Some(rest) = s.strip_prefix("bennett") {
            let runs = match rest.strip_prefix(':') {
                Some(r) => r.parse().map_err(|_| Error::Config(format!("bad run count in '{s}'")))?,
                None if rest.is_empty() => 10,
                None => return Err(Error::Config(format!("unknown method '{s}'"))),
            };
            return Ok(Method::Bennett { runs });
        }
        let mut parts = s.split('+');
        let kind: RelaxationKind = parts.next().unwrap_or_default().parse()?;
        match parts.collect::<Vec<_>>().as_slice() {
            [] => Ok(Method::Relaxation { kind }),
            ["round"] => Ok(Method::Rounding { kind, lloyd_pass: false }),
            ["round", "lloyd"] => Ok(Method::Rounding { kind, lloyd_pass: true }),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub cardinality: CardinalitySource,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    /// Wall-clock budget per solve, in seconds.
    #[serde(default)]
    pub time_budget_secs: Option<f64>,
    /// Methods run concurrently; row order never depends on it.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        if let Some(t) = self.time_budget_secs {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("invalid time budget {t}")));
            }
        }
        self.solver.validate()
    }

    fn solver_config(&self) -> SolverConfig {
        let mut cfg = self.solver.clone();
        if let Some(t) = self.time_budget_secs {
            cfg.time_limit = Some(Duration::from_secs_f64(t));
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// Only reported when every relaxation solve reached optimality.
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    /// `(UB - LB) / max(1, |LB|)` when both bounds exist.
    pub gap: Option<f64>,
    pub wall_time_secs: f64,
    /// Solver status, `ok` for methods without a solver, or `error`.
    pub status: String,
    pub accuracy: Option<f64>,
    /// Coefficient of variation over multi-start runs.
    pub cv: Option<f64>,
    pub error: Option<String>,
}

impl ReportRow {
    fn new(method: String) -> Self {
        Self {
            method,
            lower_bound: None,
            upper_bound: None,
            gap: None,
            wall_time_secs: 0.0,
            status: "ok".into(),
            accuracy: None,
            cv: None,
            error: None,
        }
    }

    fn with_bounds(mut self, lb: Option<f64>, ub: Option<f64>) -> Self {
        self.lower_bound = lb;
        self.upper_bound = ub;
        self.gap = lb.zip(ub).map(|(l, u)| relative_gap(u, l));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub dim: usize,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub outliers: usize,
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub rows: Vec<ReportRow>,
    pub environment: Environment,
}

impl Report {
    /// Copy with all timing fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.wall_time_secs = 0.0;
        }
        r
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let d = &self.dataset;
        let mut out = format!(
            "N={} d={} K={} sizes={:?} n0={} balanced={}\n",
            d.n, d.dim, d.k, d.sizes, d.outliers, d.balanced
        );
        out += &format!(
            "{:<22} {:>14} {:>14} {:>10} {:>9} {:>9} {:<18}\n",
            "method", "LB", "UB", "gap", "time[s]", "acc", "status"
        );
        let num = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
        for r in &self.rows {
            out += &format!(
                "{:<22} {:>14} {:>14} {:>10} {:>9.2} {:>9} {:<18}\n",
                r.method,
                num(r.lower_bound, 4),
                num(r.upper_bound, 4),
                r.gap.map_or_else(|| "-".to_string(), |g| format!("{g:.2e}")),
                r.wall_time_secs,
                num(r.accuracy, 3),
                r.status
            );
            if let Some(e) = &r.error {
                out += &format!("    error: {e}\n");
            }
        }
        out
    }
}

/// Runs every method; failures are recorded in their rows. Only an invalid
/// configuration or an unreadable dataset fails the whole call.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let loaded = config.dataset.load()?;
    let spec = config.cardinality.resolve(loaded.dataset.len(), loaded.labels.as_deref())?;
    let rows = run_methods(config, &loaded, &spec);
    Ok(Report {
        config: config.clone(),
        dataset: DatasetSummary {
            n: loaded.dataset.len(),
            dim: loaded.dataset.dim(),
            k: spec.k(),
            sizes: spec.sizes().to_vec(),
            outliers: spec.outlier_count(),
            balanced: spec.is_balanced(),
        },
        rows,
        environment: Environment::current(),
    })
}

fn run_methods(config: &ExperimentConfig, loaded: &LoadedData, spec: &CardinalitySpec) -> Vec<ReportRow> {
    let mut rows: Vec<Option<ReportRow>> = vec![None; config.methods.len()];
    for (chunk_idx, chunk) in config.methods.chunks(config.workers).enumerate() {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|m| s.spawn(move || run_method(m, config, loaded, spec))).collect();
            for (j, h) in handles.into_iter().enumerate() {
                let method = &chunk[j];
                let row = h.join().unwrap_or_else(|_| {
                    let mut r = ReportRow::new(method.to_string());
                    r.status = "error".into();
                    r.error = Some("method panicked".into());
                    r
                });
                rows[chunk_idx * config.workers + j] = Some(row);
            }
        });
    }
    rows.into_iter().map(|r| r.expect("every method produces a row")).collect()
}

/// Runs one method and never fails: errors end up in the row.
pub fn run_method(method: &Method, config: &ExperimentConfig, loaded: &LoadedData, spec: &CardinalitySpec) -> ReportRow {
    let start = Instant::now();
    let mut row = match execute_method(method, config, loaded, spec) {
        Ok((row, _)) => row,
        Err(e) => {
            let mut r = ReportRow::new(method.to_string());
            r.status = "error".into();
            r.error = Some(e.to_string());
            r
        }
    };
    row.wall_time_secs = start.elapsed().as_secs_f64();
    row
}

/// Runs one method and also returns the clustering it produced, if any.
pub fn execute_method(
    method: &Method,
    config: &ExperimentConfig,
    loaded: &LoadedData,
    spec: &CardinalitySpec,
) -> Result<(ReportRow, Option<Clustering>)> {
    let start = Instant::now();
    let (mut row, clustering) = method_row(method, config, loaded, spec)?;
    row.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((row, clustering))
}

fn method_row(
    method: &Method,
    config: &ExperimentConfig,
    loaded: &LoadedData,
    spec: &CardinalitySpec,
) -> Result<(ReportRow, Option<Clustering>)> {
    let data = &loaded.dataset;
    let solver = config.solver_config();
    let row = ReportRow::new(method.to_string());
    let accuracy = |c: &Clustering| loaded.labels.as_ref().and_then(|l| recovery_accuracy(c, l).ok());
    match method {
        Method::Relaxation { kind } => {
            let program = build_relaxation(*kind, &distance_matrix(data), &gram_matrix(data), spec)?;
            let sol = solve(&program, &solver)?;
            if !sol.status.has_iterate() {
                return Err(Error::Solver(format!("{kind} stopped with status {}", sol.status)));
            }
            let mut row = row.with_bounds(sol.status.is_optimal().then_some(sol.objective), None);
            row.status = sol.status.to_string();
            Ok((row, None))
        }
        Method::Rounding { kind, lloyd_pass } => {
            let cfg = RoundingConfig { solver, lloyd_pass: *lloyd_pass };
            let r = round(data, spec, *kind, &cfg)?;
            let mut row = row.with_bounds(r.certified.then_some(r.lower_bound), Some(r.upper_bound));
            row.status = r.status.to_string();
            row.accuracy = accuracy(&r.clustering);
            Ok((row, Some(r.clustering)))
        }
        Method::Bennett { runs } => {
            let r = multistart_bennett(data, spec, *runs, config.seed)?;
            let mut row = row.with_bounds(None, Some(r.best_cost));
            row.cv = Some(r.cv);
            row.accuracy = accuracy(&r.best);
            if r.converged_runs < r.runs {
                row.status = format!("ok ({} of {} runs hit the iteration cap)", r.runs - r.converged_runs, r.runs);
            }
            Ok((row, Some(r.best)))
        }
        Method::Oracle => {
            let r = enumerate_optimal(data, spec)?;
            let mut row = row.with_bounds(Some(r.cost), Some(r.cost));
            row.accuracy = accuracy(&r.clustering);
            Ok((row, Some(r.clustering)))
        }
    }
}

/// How the elbow is picked from the objective curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElbowRule {
    /// Largest discrete second derivative of the log objective.
    #[default]
    SecondDifference,
    /// Right end of the steepest log-objective drop.
    LargestDrop,
}

impl FromStr for ElbowRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "second-difference" => Ok(ElbowRule::SecondDifference),
            "largest-drop" => Ok(ElbowRule::LargestDrop),
            _ => Err(Error::Config(format!("unknown elbow rule '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowPoint {
    pub n0: usize,
    pub objective: f64,
    pub status: SolverStatus,
    pub kind: RelaxationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    pub points: Vec<ElbowPoint>,
    /// Grid values dropped because the residual sizes are not integral.
    pub skipped: Vec<usize>,
    pub chosen_n0: usize,
    pub rule: ElbowRule,
}

impl ElbowResult {
    /// `n0,objective,status,kind` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n0,objective,status,kind\n");
        for p in &self.points {
            out += &format!("{},{:?},{},{}\n", p.n0, p.objective, p.status, p.kind);
        }
        out
    }
}

/// Solves the outlier relaxation `kind` for each `n0` in the grid and picks
/// the elbow of the objective curve. At `n0 = 0` the outlier-free
/// counterpart of `kind` is solved instead.
pub fn elbow_scan(
    data: &DataSet,
    relative_sizes: &[usize],
    n0_grid: &[usize],
    kind: RelaxationKind,
    config: &SolverConfig,
    rule: ElbowRule,
) -> Result<ElbowResult> {
    use RelaxationKind::*;
    let base = match kind {
        RLpO => RLp,
        RSdpO => RSdp,
        RLpOb => RLpB,
        RSdpOb => RSdpB,
        _ => return Err(Error::Config(format!("{kind} is not an outlier relaxation"))),
    };
    if kind.requires_balanced() && relative_sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::SpecViolation(format!("{kind} requires equal relative sizes")));
    }
    let mut grid = n0_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let n = data.len();
    let mut skipped = Vec::new();
    let mut specs = Vec::new();
    for &n0 in &grid {
        match (n0 <= n).then(|| proportional_sizes(relative_sizes, n - n0)).flatten() {
            Some(sizes) => specs.push((n0, CardinalitySpec::new(sizes, n0)?)),
            None => skipped.push(n0),
        }
    }
    if specs.is_empty() {
        return Err(Error::SpecViolation(format!("no outlier count in {n0_grid:?} leaves integral cluster sizes")));
    }
    let d = distance_matrix(data);
    let w = gram_matrix(data);
    let mut points = Vec::with_capacity(specs.len());
    for (n0, spec) in specs {
        let k = if n0 == 0 { base } else { kind };
        let sol = solve(&build_relaxation(k, &d, &w, &spec)?, config)?;
        if !sol.status.has_iterate() {
            return Err(Error::Solver(format!("{k} at n0={n0} stopped with status {}", sol.status)));
        }
        points.push(ElbowPoint { n0, objective: sol.objective, status: sol.status, kind: k });
    }
    let chosen_n0 = pick_elbow(&points, rule);
    Ok(ElbowResult { points, skipped, chosen_n0, rule })
}

/// Objectives are floored at `1e-12 * (1 + max)` before taking logs.
fn pick_elbow(points: &[ElbowPoint], rule: ElbowRule) -> usize {
    if points.len() < 2 {
        return points[0].n0;
    }
    let max = points.iter().map(|p| p.objective).fold(0.0, f64::max);
    let floor = 1e-12 * (1.0 + max);
    let logs: Vec<f64> = points.iter().map(|p| p.objective.max(floor).ln()).collect();
    let slope = |i: usize| (logs[i + 1] - logs[i]) / (points[i + 1].n0 - points[i].n0) as f64;
    match rule {
        ElbowRule::LargestDrop => {
            let best = (0..points.len() - 1).fold(0, |b, i| if slope(i) < slope(b) { i } else { b });
            points[best + 1].n0
        }
        ElbowRule::SecondDifference => {
            // Only interior points have a second difference; without a
            // positive bend the smallest outlier count wins.
            let mut best: Option<(usize, f64)> = None;
            for i in 1..points.len() - 1 {
                let s = slope(i) - slope(i - 1);
                if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            best.map_or(points[0].n0, |(i, _)| points[i].n0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str, label: Option<&str>) -> Result<Ingested> {
        let opts = CsvOptions { label_column: label.map(String::from), ..Default::default() };
        ingest_reader(text.as_bytes(), &opts)
    }

    #[test]
    fn ingest_small_file() {
        let ing = ingest("x,y,label\n0,0,0\n1,0,0\n9,9,1\n", Some("label")).unwrap();
        assert_eq!((ing.dataset.len(), ing.dataset.dim()), (3, 2));
        assert_eq!(ing.labels, Some(vec![Some(0), Some(0), Some(1)]));
        assert_eq!(ing.class_counts(), vec![2, 1]);
        assert_eq!(ing.feature_names, vec!["x", "y"]);
    }

    #[test]
    fn ingest_errors_name_row_and_column() {
        match ingest("x,y\n1,2\n3,\n", None) {
            Err(Error::Ingest { row, column, .. }) => assert_eq!((row, column.as_str()), (3, "y")),
            other => panic!("{other:?}"),
        }
        match ingest("a,b\n1,zz\n", None) {
            Err(Error::Ingest { row, column, message }) => {
                assert_eq!((row, column.as_str()), (2, "b"));
                assert!(message.contains("zz"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(ingest("x,y\n1,2\n", Some("label")), Err(Error::Config(_))));
    }

    #[test]
    fn labels_sort_numerically_and_mark_outliers() {
        let ing = ingest("x,c\n0,10\n1,9\n2,-1\n3,10\n", Some("c")).unwrap();
        assert_eq!(ing.label_names, vec!["9", "10"]);
        assert_eq!(ing.labels, Some(vec![Some(1), Some(0), None, Some(1)]));
        assert_eq!(ing.outlier_count(), 1);
        let spec = CardinalitySource::FromLabels.resolve(4, ing.labels.as_deref()).unwrap();
        assert_eq!((spec.sizes(), spec.outlier_count()), (&[1usize, 2][..], 1));
        let named = ingest("x,c\n0,setosa\n1,virginica\n", Some("c")).unwrap();
        assert_eq!(named.label_names, vec!["setosa", "virginica"]);
    }

    #[test]
    fn headerless_and_delimiter() {
        let opts = CsvOptions { label_column: Some("2".into()), delimiter: ';', header: false };
        let ing = ingest_reader("1;2;a\n3;4;b\n".as_bytes(), &opts).unwrap();
        assert_eq!(ing.dataset.point(1), &[3.0, 4.0]);
        assert_eq!(ing.labels.unwrap(), vec![Some(0), Some(1)]);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let pred = Clustering::new(vec![vec![0, 1], vec![2, 3]], vec![4]);
        let truth = [Some(1), Some(1), Some(0), Some(0), None];
        assert_eq!(recovery_accuracy(&pred, &truth).unwrap(), 1.0);
        let swapped = [Some(0), Some(0), Some(1), Some(1), None];
        assert_eq!(recovery_accuracy(&pred, &swapped).unwrap(), 1.0);
        let off = [Some(0), Some(1), Some(1), Some(1), Some(0)];
        assert!((recovery_accuracy(&pred, &off).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn method_names_roundtrip() {
        for s in ["R_SDP_b", "R_LP_b+round", "R_LP_ob+round+lloyd", "bennett:10", "oracle"] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("bennett".parse::<Method>().unwrap(), Method::Bennett { runs: 10 });
        assert!("R_LP+foo".parse::<Method>().is_err());
    }

    #[test]
    fn cardinality_spec_strings() {
        assert_eq!("labels".parse::<CardinalitySource>().unwrap(), CardinalitySource::FromLabels);
        assert_eq!("balanced:3".parse::<CardinalitySource>().unwrap(), CardinalitySource::Balanced { k: 3 });
        assert_eq!(
            "relative:1,2+3".parse::<CardinalitySource>().unwrap(),
            CardinalitySource::Relative { weights: vec![1, 2], outliers: 3 }
        );
        assert_eq!(
            "4, 5".parse::<CardinalitySource>().unwrap(),
            CardinalitySource::Explicit { sizes: vec![4, 5], outliers: 0 }
        );
        assert!("4,x".parse::<CardinalitySource>().is_err());
    }

    #[test]
    fn cardinality_sources() {
        assert_eq!(CardinalitySource::Balanced { k: 3 }.resolve(12, None).unwrap().sizes(), &[4, 4, 4]);
        assert!(CardinalitySource::Balanced { k: 5 }.resolve(12, None).is_err());
        let rel = CardinalitySource::Relative { weights: vec![1, 2], outliers: 3 }.resolve(12, None).unwrap();
        assert_eq!((rel.sizes(), rel.outlier_count()), (&[3usize, 6][..], 3));
        assert!(CardinalitySource::FromLabels.resolve(3, None).is_err());
        assert!(CardinalitySource::Explicit { sizes: vec![2, 2], outliers: 0 }.resolve(5, None).is_err());
    }

    #[test]
    fn empty_method_list_is_a_config_error() {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Separated { k: 2, n: 2, outliers: 0, dim: 2, margin: 2.0, seed: 0 },
            cardinality: CardinalitySource::Balanced { k: 2 },
            methods: vec![],
            solver: SolverConfig::default(),
            seed: 0,
            time_budget_secs: None,
            workers: 1,
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn failures_stay_in_their_rows() {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Separated { k: 2, n: 3, outliers: 0, dim: 2, margin: 2.0, seed: 4 },
            cardinality: CardinalitySource::Balanced { k: 2 },
            methods: vec![
                "R_LP_ob".parse().unwrap(),
                "R_LP_b+round".parse().unwrap(),
                "oracle".parse().unwrap(),
                "bennett:3".parse().unwrap(),
            ],
            solver: SolverConfig::default(),
            seed: 7,
            time_budget_secs: None,
            workers: 2,
        };
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.rows[0].status, "error");
        assert!(rep.rows[0].error.is_some());
        let lb = rep.rows[1].lower_bound.unwrap();
        let ub = rep.rows[1].upper_bound.unwrap();
        assert!(lb <= ub + 1e-6 * (1.0 + ub));
        assert_eq!(rep.rows[1].accuracy, Some(1.0));
        assert!((rep.rows[2].upper_bound.unwrap() - ub).abs() < 1e-9);
        assert!(rep.rows[3].cv.is_some());
        assert_eq!(rep.without_timings(), run_experiment(&cfg).unwrap().without_timings());
        assert!(rep.to_table().contains("R_LP_b+round"));
    }

    #[test]
    fn minimal_config_json() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"type": "csv", "path": "a.csv"},
                "cardinality": {"type": "relative", "weights": [1, 2], "outliers": 3},
                "methods": [{"type": "rounding", "kind": "R_LP_ob"}, {"type": "oracle"}],
                "solver": {"tolerance": 1e-7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.solver.tolerance, Some(1e-7));
        assert!(cfg.solver.scaling);
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.methods[0].to_string(), "R_LP_ob+round");
    }

    #[test]
    fn unconverged_solves_report_no_lower_bound() {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Separated { k: 3, n: 6, outliers: 0, dim: 2, margin: 2.0, seed: 2 },
            cardinality: CardinalitySource::Balanced { k: 3 },
            methods: vec!["R_SDP_b".parse().unwrap(), "R_SDP_b+round".parse().unwrap()],
            solver: SolverConfig::default().with_max_iterations(2),
            seed: 0,
            time_budget_secs: None,
            workers: 1,
        };
        let rep = run_experiment(&cfg).unwrap();
        for row in &rep.rows {
            assert_ne!(row.status, "optimal", "{row:?}");
            assert_eq!(row.lower_bound, None);
            assert_eq!(row.gap, None);
        }
        assert!(rep.rows[1].upper_bound.is_some());
    }

    #[test]
    fn elbow_grid_handling() {
        let inst = generate_separated_instance(2, 3, 0, 2, 3.0, 1).unwrap();
        let cfg = SolverConfig::default();
        let r = elbow_scan(&inst.dataset, &[1, 1], &[0], RelaxationKind::RLpOb, &cfg, ElbowRule::default()).unwrap();
        assert_eq!(r.chosen_n0, 0);
        assert_eq!(r.points[0].kind, RelaxationKind::RLpB);
        let err = elbow_scan(&inst.dataset, &[1, 1], &[1, 3], RelaxationKind::RLpOb, &cfg, ElbowRule::default());
        assert!(matches!(err, Err(Error::SpecViolation(_))));
        let r = elbow_scan(&inst.dataset, &[1, 1], &[0, 1, 2], RelaxationKind::RLpOb, &cfg, ElbowRule::default()).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert!(r.to_csv().starts_with("n0,objective"));
        assert!(elbow_scan(&inst.dataset, &[1, 1], &[0], RelaxationKind::RLpB, &cfg, ElbowRule::default()).is_err());
    }

    #[test]
    fn elbow_rules_on_a_synthetic_curve() {
        let mk = |v: &[(usize, f64)]| -> Vec<ElbowPoint> {
            v.iter()
                .map(|&(n0, objective)| ElbowPoint {
                    n0,
                    objective,
                    status: SolverStatus::Optimal,
                    kind: RelaxationKind::RLpOb,
                })
                .collect()
        };
        let curve = mk(&[(0, 1000.0), (3, 10.0), (6, 8.0), (9, 6.5), (12, 5.0)]);
        assert_eq!(pick_elbow(&curve, ElbowRule::SecondDifference), 3);
        assert_eq!(pick_elbow(&curve, ElbowRule::LargestDrop), 3);
        let straight = mk(&[(0, 100.0), (1, 10.0), (2, 1.0)]);
        assert_eq!(pick_elbow(&straight, ElbowRule::SecondDifference), 0);
    }
}
