//! Command-line front end.
//!
//! Usage errors (bad flags or values, inconsistent options) exit with 2,
//! failures while running exit with 1.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hgm_core::clustering::coherence_rates;
use hgm_core::model::standardize;
use hgm_core::precision;
use hgm_core::selection::{select_k, LambdaGrid};
use hgm_core::simbench::{
    edge_confusion, roc_auc, run_experiment, sample_dataset, ExperimentPlan, RocGrid, RocPlan, SimulationSpec,
};
use hgm_core::solver::{fit, fit_from_groups, Estimator, ReassignMetric, SolverConfig};
use hgm_core::{DataMatrix, GroupAssignment, PrecisionMatrix};
use serde::Serialize;

use crate::io::{self, fmt_f64, MatrixFormat};
use crate::manifest::{write_timings, RunManifest, Timings};
use crate::report::{BicScanReport, EvaluationEntry, EvaluationReport, FitSummary, RestartSummary};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hgm", version, about = "Hierarchical graphical model estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate grouping, latent signals, noise variances and the network.
    #[command(allow_negative_numbers = true)]
    Fit(FitArgs),
    /// Draw a synthetic dataset with known grouping and network.
    #[command(allow_negative_numbers = true)]
    Simulate(SimulateArgs),
    /// Score estimated networks and groupings against a known truth.
    #[command(allow_negative_numbers = true)]
    Evaluate(EvaluateArgs),
    /// Choose K and lambda by BIC over grids.
    #[command(allow_negative_numbers = true)]
    BicScan(BicScanArgs),
    /// Repeated simulation study: grouping recovery and edge-recovery ROC.
    #[command(allow_negative_numbers = true)]
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorArg {
    Glasso,
    Scio,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Glasso => Estimator::Glasso,
            EstimatorArg::Scio => Estimator::Scio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Euclidean,
    PhiWeighted,
}

impl From<MetricArg> for ReassignMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => ReassignMetric::Euclidean,
            MetricArg::PhiWeighted => ReassignMetric::PhiWeighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Bin => MatrixFormat::Bin,
        }
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{s:?} is not a positive finite number")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{s:?} is not a non-negative finite number")),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("{s:?} is not a positive integer")),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        _ => Err(format!("{s:?} is not in [0, 1)")),
    }
}

/// A lambda grid: a bare integer is a point count for the automatic grid,
/// anything else a comma-separated list of positive values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Count(usize),
    Values(Vec<f64>),
}

fn grid_spec(s: &str) -> Result<GridSpec, String> {
    if !s.contains([',', '.', 'e', 'E']) {
        return positive_usize(s).map(GridSpec::Count);
    }
    s.split(',')
        .map(|t| positive_f64(t.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map(GridSpec::Values)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Data matrix: rows are observations, columns are variables.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Use the data as given instead of centering and scaling each column.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = EstimatorArg::Scio)]
    pub estimator: EstimatorArg,
    /// Relative change of Z below which the updates stop.
    #[arg(long, default_value_t = 1e-4, value_parser = positive_f64)]
    pub etol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 10, value_parser = positive_usize)]
    pub restarts: usize,
    /// Restart r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rule for reassigning variables to groups.
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,
    /// Seeded k-means runs inside each restart.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    pub kmeans_restarts: usize,
    /// Optimality tolerance of the precision estimator.
    #[arg(long, default_value_t = precision::DEFAULT_TOL, value_parser = positive_f64)]
    pub precision_tol: f64,
    #[arg(long, default_value_t = precision::DEFAULT_MAX_ITER, value_parser = positive_usize)]
    pub precision_max_iter: usize,
}

impl SolverArgs {
    fn config(&self, k: usize, lambda: f64) -> SolverConfig {
        SolverConfig {
            k,
            lambda,
            e_tol: self.etol,
            max_iter: self.max_iter,
            restarts: self.restarts,
            seed: self.seed,
            estimator: self.estimator.into(),
            reassign_metric: self.metric.into(),
            precision_tol: self.precision_tol,
            precision_max_iter: self.precision_max_iter,
            kmeans_restarts: self.kmeans_restarts,
        }
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.restarts as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// Worker threads for the library (default: all cores). Results do not
    /// depend on it.
    #[arg(long, value_parser = positive_usize)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of groups; implied by --fixed-groups when given.
    #[arg(long, value_parser = positive_usize)]
    pub k: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub lambda: f64,
    /// Grouping file (`variable,group`, one-based); the grouping is kept
    /// fixed and only Z, Phi and Omega are estimated.
    #[arg(long)]
    pub fixed_groups: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpecArgs {
    #[arg(long, default_value_t = 180)]
    pub n: usize,
    /// Number of latent nodes.
    #[arg(long, default_value_t = 200, value_parser = positive_usize)]
    pub k: usize,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    pub block_size: usize,
    #[arg(long, default_value_t = 0.8, value_parser = unit_interval)]
    pub rho: f64,
    /// Observed variables per latent node.
    #[arg(long, default_value_t = 50, value_parser = positive_usize)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub sim_seed: u64,
}

impl SpecArgs {
    fn spec(&self) -> SimulationSpec {
        SimulationSpec {
            n: self.n,
            k: self.k,
            block_size: self.block_size,
            rho: self.rho,
            replicates_per_node: self.replicates,
            noise_sd: self.noise_sd,
            seed: self.sim_seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Estimated network edge list; repeat for a ROC table.
    #[arg(long, required = true)]
    pub omega: Vec<PathBuf>,
    /// Estimated grouping file; repeat to score several.
    #[arg(long)]
    pub groups: Vec<PathBuf>,
    #[arg(long)]
    pub truth_omega: PathBuf,
    #[arg(long)]
    pub truth_groups: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BicScanArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated candidate numbers of groups.
    #[arg(long, value_delimiter = ',', required = true, value_parser = positive_usize)]
    pub k_grid: Vec<usize>,
    /// Point count of the automatic grid, or explicit comma-separated values.
    #[arg(long, default_value = "50", value_parser = grid_spec)]
    pub lambda_grid: GridSpec,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 20, value_parser = positive_usize)]
    pub repeats: usize,
    /// Lambdas of the full fits whose groupings are scored.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.5", value_parser = positive_f64)]
    pub coherence_lambdas: Vec<f64>,
    /// Estimators traced along a lambda grid with the true grouping fixed.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub roc_estimators: Vec<EstimatorArg>,
    /// ROC grid: point count (automatic) or explicit values.
    #[arg(long, default_value = "50", value_parser = grid_spec)]
    pub roc_grid: GridSpec,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    let threads = match &cmd {
        Command::Fit(a) => a.run.threads,
        Command::Simulate(a) => a.run.threads,
        Command::Evaluate(a) => a.run.threads,
        Command::BicScan(a) => a.run.threads,
        Command::Experiment(a) => a.run.threads,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build()?;
    pool.install(|| match cmd {
        Command::Fit(a) => run_fit(&a),
        Command::Simulate(a) => run_simulate(&a),
        Command::Evaluate(a) => run_evaluate(&a),
        Command::BicScan(a) => run_bic_scan(&a),
        Command::Experiment(a) => run_experiment_cmd(&a),
    })
}

fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", dir.display()))?;
    Ok(())
}

fn to_config<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn load_input(input: &InputArgs, timings: &mut Timings) -> CliResult<DataMatrix> {
    let t = Instant::now();
    let x = io::load_matrix(&input.input, input.format.into())?;
    let x = if input.no_standardize { x } else { standardize(&x)? };
    timings.record("load", t.elapsed());
    Ok(x)
}

fn finish(dir: &Path, mut manifest: RunManifest, outputs: &[String], timings: &Timings) -> CliResult<()> {
    manifest.add_outputs(dir, outputs)?;
    manifest.write(dir)?;
    write_timings(dir, timings)?;
    Ok(())
}

/// `hgm fit`.
pub fn run_fit(a: &FitArgs) -> CliResult<()> {
    let mut timings = Timings::new();
    let fixed = match &a.fixed_groups {
        Some(path) => Some(io::read_groups(path)?),
        None => None,
    };
    let k = match (&fixed, a.k) {
        (Some(g), Some(k)) if g.k() != k => {
            return Err(CliError::Usage(format!(
                "--k {k} disagrees with the {} groups in --fixed-groups",
                g.k()
            )))
        }
        (Some(g), _) => g.k(),
        (None, Some(k)) => k,
        (None, None) => return Err(CliError::Usage("--k is required unless --fixed-groups is given".into())),
    };
    let x = load_input(&a.input, &mut timings)?;
    if let Some(g) = &fixed {
        if g.p() != x.p() {
            return Err(CliError::Usage(format!(
                "--fixed-groups lists {} variables but the data has {}",
                g.p(),
                x.p()
            )));
        }
    }
    let cfg = a.solver.config(k, a.lambda);

    let t = Instant::now();
    let (state, restarts, selected, failures) = match fixed {
        Some(g) => {
            let (state, trace) = fit_from_groups(&x, &cfg, g, false, None)?;
            (state, vec![RestartSummary::from_trace(&trace)], Some(0), Vec::new())
        }
        None => {
            let fr = fit(&x, &cfg)?;
            let restarts = fr.traces.iter().map(RestartSummary::from_trace).collect();
            let failures = fr.failures.iter().map(|(r, e)| format!("restart {r}: {e}")).collect();
            (fr.state, restarts, Some(fr.selected), failures)
        }
    };
    timings.record("fit", t.elapsed());

    let dir = &a.run.out_dir;
    prepare_out_dir(dir)?;
    let fmt: MatrixFormat = a.input.format.into();
    let z_name = format!("z.{}", fmt.extension());
    io::write_groups(&dir.join("groups.csv"), &state.g)?;
    io::save_matrix(&dir.join(&z_name), state.z.values(), fmt)?;
    io::write_edge_list(&dir.join("omega_edges.csv"), &state.omega)?;
    io::write_phi(&dir.join("phi.csv"), &state.phi)?;
    let summary = FitSummary::new(&x, &state, &cfg, a.fixed_groups.is_some(), selected, restarts, failures);
    io::write_json(&dir.join("summary.json"), &summary)?;

    let mut manifest = RunManifest::new("fit", to_config(a), a.solver.seeds());
    manifest.add_input(&a.input.input)?;
    if let Some(p) = &a.fixed_groups {
        manifest.add_input(p)?;
    }
    let outputs = ["groups.csv", &z_name, "omega_edges.csv", "phi.csv", "summary.json"].map(String::from);
    finish(dir, manifest, &outputs, &timings)
}

/// `hgm simulate`.
pub fn run_simulate(a: &SimulateArgs) -> CliResult<()> {
    let spec = a.spec.spec();
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut timings = Timings::new();
    let t = Instant::now();
    let (x, truth) = sample_dataset(&spec)?;
    timings.record("simulate", t.elapsed());

    let dir = &a.run.out_dir;
    prepare_out_dir(dir)?;
    let fmt: MatrixFormat = a.format.into();
    let x_name = format!("x.{}", fmt.extension());
    let z_name = format!("truth_z.{}", fmt.extension());
    io::save_matrix(&dir.join(&x_name), x.values(), fmt)?;
    io::save_matrix(&dir.join(&z_name), truth.z_true.values(), fmt)?;
    io::write_groups(&dir.join("truth_groups.csv"), &truth.g_true)?;
    io::write_edge_list(&dir.join("truth_omega_edges.csv"), &truth.omega_true)?;
    io::write_json(&dir.join("spec.json"), &spec)?;

    let manifest = RunManifest::new("simulate", to_config(a), vec![spec.seed]);
    let outputs = [x_name, z_name, "truth_groups.csv".into(), "truth_omega_edges.csv".into(), "spec.json".into()];
    finish(dir, manifest, &outputs, &timings)
}

/// Lambda recorded in a `summary.json` next to an estimate, if any.
fn sibling_lambda(path: &Path) -> Option<f64> {
    let summary = path.parent()?.join("summary.json");
    let v: serde_json::Value = io::read_json(&summary).ok()?;
    v.get("lambda")?.as_f64()
}

/// `hgm evaluate`.
pub fn run_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    if !a.groups.is_empty() && a.truth_groups.is_none() {
        return Err(CliError::Usage("--groups needs --truth-groups".into()));
    }
    let mut timings = Timings::new();
    let t = Instant::now();
    let truth_omega = io::read_edge_list(&a.truth_omega)?;
    let truth_groups = a.truth_groups.as_deref().map(io::read_groups).transpose()?;
    let mut manifest = RunManifest::new("evaluate", to_config(a), Vec::new());
    manifest.add_input(&a.truth_omega)?;
    if let Some(p) = &a.truth_groups {
        manifest.add_input(p)?;
    }

    let mut entries = Vec::new();
    let mut roc = String::from("estimate,lambda,sensitivity,specificity,tp,fp,tn,fn\n");
    for path in &a.omega {
        let est: PrecisionMatrix = io::read_edge_list(path)?;
        if est.k() != truth_omega.k() {
            return Err(CliError::Usage(format!(
                "{} has {} nodes, the truth has {}",
                path.display(),
                est.k(),
                truth_omega.k()
            )));
        }
        manifest.add_input(path)?;
        let c = edge_confusion(&est, &truth_omega)?;
        let lambda = sibling_lambda(path);
        roc.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            path.display(),
            lambda.map(fmt_f64).unwrap_or_default(),
            fmt_f64(c.sensitivity()),
            fmt_f64(c.specificity()),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        ));
        entries.push(EvaluationEntry {
            estimate: path.display().to_string(),
            lambda,
            confusion: c,
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
        });
    }

    let mut coherence = String::from("estimate,true_group,rate\n");
    let mut coherence_summary = Vec::new();
    if let Some(truth) = &truth_groups {
        for path in &a.groups {
            let g: GroupAssignment = io::read_groups(path)?;
            manifest.add_input(path)?;
            let rates = coherence_rates(&g, truth)?;
            for (k, r) in rates.iter().enumerate() {
                coherence.push_str(&format!("{},{},{}\n", path.display(), k + 1, fmt_f64(*r)));
            }
            coherence_summary.push(crate::report::CoherenceEntry::new(path, &rates));
        }
    }
    timings.record("evaluate", t.elapsed());

    let auc = (entries.len() > 1).then(|| {
        let pts: Vec<(f64, f64)> = entries.iter().map(|e| (1.0 - e.specificity, e.sensitivity)).collect();
        roc_auc(&pts)
    });
    let report = EvaluationReport {
        roc: entries,
        auc,
        coherence: coherence_summary,
    };
    let dir = &a.run.out_dir;
    prepare_out_dir(dir)?;
    io::write_text(&dir.join("roc.csv"), &roc)?;
    io::write_text(&dir.join("coherence.csv"), &coherence)?;
    io::write_json(&dir.join("evaluation.json"), &report)?;
    let outputs = ["roc.csv", "coherence.csv", "evaluation.json"].map(String::from);
    finish(dir, manifest, &outputs, &timings)
}

/// `hgm bic-scan`.
pub fn run_bic_scan(a: &BicScanArgs) -> CliResult<()> {
    let mut timings = Timings::new();
    let x = load_input(&a.input, &mut timings)?;
    if let Some(&k) = a.k_grid.iter().find(|&&k| k > x.p()) {
        return Err(CliError::Usage(format!("--k-grid value {k} exceeds the {} variables", x.p())));
    }
    let grid = match &a.lambda_grid {
        GridSpec::Count(c) => LambdaGrid::Auto { count: *c },
        GridSpec::Values(v) => LambdaGrid::Explicit(v.clone()),
    };
    let cfg = a.solver.config(a.k_grid[0], 1.0);
    let t = Instant::now();
    let sel = select_k(&x, &a.k_grid, &grid, &cfg)?;
    timings.record("scan", t.elapsed());

    let dir = &a.run.out_dir;
    prepare_out_dir(dir)?;
    let mut path = String::from("k,lambda,bic,neg_log_lik,s,converged\n");
    for p in &sel.paths {
        for r in &p.records {
            path.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.k,
                fmt_f64(r.lambda),
                fmt_f64(r.bic),
                fmt_f64(r.neg_log_lik),
                r.s,
                r.converged
            ));
        }
    }
    io::write_text(&dir.join("bic_path.csv"), &path)?;
    let report = BicScanReport::new(&sel);
    io::write_json(&dir.join("selection.json"), &report)?;

    let mut manifest = RunManifest::new("bic-scan", to_config(a), a.solver.seeds());
    manifest.add_input(&a.input.input)?;
    let outputs = ["bic_path.csv", "selection.json"].map(String::from);
    finish(dir, manifest, &outputs, &timings)
}

/// `hgm experiment`.
pub fn run_experiment_cmd(a: &ExperimentArgs) -> CliResult<()> {
    let spec = a.spec.spec();
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = a.solver.config(spec.k, a.coherence_lambdas.first().copied().unwrap_or(0.1));
    let roc = (!a.roc_estimators.is_empty()).then(|| RocPlan {
        estimators: a.roc_estimators.iter().map(|&e| e.into()).collect(),
        grid: match &a.roc_grid {
            GridSpec::Count(c) => RocGrid::Auto { count: *c, ratio: 100.0 },
            GridSpec::Values(v) => RocGrid::Explicit(v.clone()),
        },
    });
    let plan = ExperimentPlan {
        repeats: a.repeats,
        coherence_lambdas: a.coherence_lambdas.clone(),
        roc,
    };
    let mut timings = Timings::new();
    let t = Instant::now();
    let report = run_experiment(&spec, &cfg, &plan)?;
    timings.record("experiment", t.elapsed());

    let dir = &a.run.out_dir;
    prepare_out_dir(dir)?;
    io::write_json(&dir.join("report.json"), &report)?;
    let seeds = (0..a.repeats as u64).map(|r| spec.seed.wrapping_add(r)).collect();
    let manifest = RunManifest::new("experiment", to_config(a), seeds);
    finish(dir, manifest, &["report.json".to_string()], &timings)
}
