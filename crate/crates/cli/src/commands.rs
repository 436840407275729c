//! Subcommands and their `report.json` layouts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use giwvol::likelihood::{loglik_of_run, perf_from_errors, perf_metrics};
use giwvol::matstat::vech;
use giwvol::search::{coordinate_search, DeltaOutcome, Objective};
use giwvol::simulate::{simulate_seeded, SimModel};
use giwvol::{FilterRun, LikelihoodBreakdown, ModelConfig, PerfReport, SymPosDefMatrix, VolFilter};

use crate::config::RunConfig;
use crate::data::{load_csv, InputKind, LoadOptions, ReturnsTable};
use crate::error::{CliError, Result};
use crate::output::{self, write_json};

#[derive(Debug, Parser)]
#[command(name = "giwvol", version, about = "Sequential estimation of time-varying covariance matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the filter and write volatility, forecasts and diagnostics.
    Filter(DataArgs),
    /// Evaluate the log-likelihood at the filtered volatility path.
    Loglik(DataArgs),
    /// Grid search over diagonal Omega and the discount factor.
    Search(SearchArgs),
    /// Simulate a return series from the model.
    Simulate(SimulateArgs),
    /// Recompute forecast diagnostics from a forecast.csv.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// CSV with a header row and an optional leading date column.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Input holds price levels; they are converted to log-returns.
    #[arg(long, conflicts_with = "returns")]
    pub levels: bool,
    /// Input already holds returns (default).
    #[arg(long)]
    pub returns: bool,
    /// Multiply returns by this factor (e.g. 100 for percent).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Record wall-clock time in the manifest; outputs are then no longer
    /// byte-identical across runs.
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Loglik,
    MsseDistance,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Loglik => Objective::LogLik,
            ObjectiveArg::MsseDistance => Objective::MsseDistance,
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Worker threads for candidate evaluation.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value = "loglik")]
    pub objective: ObjectiveArg,
    /// Evaluate the full product grid (p <= 2) instead of coordinate ascent.
    #[arg(long)]
    pub exhaustive: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed; 0 if neither is given.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// A forecast.csv written by `filter` or `search`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub kind: &'static str,
    pub scale: f64,
    pub rows: usize,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub library: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Manifest {
            library: "giwvol",
            version: giwvol::VERSION,
            command,
            config: None,
            config_sha256: None,
            input: None,
            seed: None,
            steps: None,
            timing_seconds: None,
        }
    }

    fn with_config(mut self, config: &RunConfig, bytes: &[u8]) -> Self {
        self.config = Some(config.clone());
        self.config_sha256 = Some(sha256_hex(bytes));
        self
    }

    fn finish(mut self, started: Instant, record_timing: bool) -> Self {
        if record_timing {
            self.timing_seconds = Some(started.elapsed().as_secs_f64());
        }
        self
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Log-likelihood totals without the per-step vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoglikTotals {
    pub total: f64,
    pub constant_c: f64,
    pub quad_term: f64,
    pub chol_logdet_term: f64,
    pub lt_term: f64,
    pub sigma_logdet_term: f64,
}

impl From<&LikelihoodBreakdown> for LoglikTotals {
    fn from(b: &LikelihoodBreakdown) -> Self {
        LoglikTotals {
            total: b.total,
            constant_c: b.constant_c,
            quad_term: b.quad_term,
            chol_logdet_term: b.chol_logdet_term,
            lt_term: b.lt_term,
            sigma_logdet_term: b.sigma_logdet_term,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalState {
    pub m: Vec<f64>,
    /// `S_N*` in row-major lower-triangle order.
    pub s_star_vech: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub command: &'static str,
    pub n_obs: usize,
    pub dim: usize,
    pub columns: Vec<String>,
    pub perf: PerfReport,
    /// `null` when some step has no defined contribution (see `loglik_error`).
    pub loglik: Option<LoglikTotals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik_error: Option<String>,
    pub final_state: FinalState,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoglikReport {
    pub command: &'static str,
    pub n_obs: usize,
    pub dim: usize,
    pub loglik: LoglikTotals,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSummary {
    pub z: Vec<f64>,
    pub omega_diag: Vec<f64>,
    pub delta: f64,
    pub objective: f64,
    pub objective_kind: Objective,
    pub q: u32,
    pub per_delta: Vec<DeltaOutcome>,
    pub evaluations: usize,
    pub failed_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub command: &'static str,
    pub n_obs: usize,
    pub dim: usize,
    pub columns: Vec<String>,
    pub search: SearchSummary,
    /// Diagnostics of the filter run at the selected hyperparameters.
    pub perf: PerfReport,
    pub loglik: Option<LoglikTotals>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub command: &'static str,
    pub n_steps: usize,
    pub dim: usize,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub command: &'static str,
    pub perf: PerfReport,
    pub manifest: Manifest,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Filter(a) => run_filter_cmd(&a).map(drop),
        Command::Loglik(a) => run_loglik_cmd(&a).map(drop),
        Command::Search(a) => run_search_cmd(&a).map(drop),
        Command::Simulate(a) => run_simulate_cmd(&a).map(drop),
        Command::Metrics(a) => run_metrics_cmd(&a).map(drop),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

struct Loaded {
    config: RunConfig,
    config_bytes: Vec<u8>,
    table: ReturnsTable,
    input: InputInfo,
}

fn load_inputs(a: &DataArgs) -> Result<Loaded> {
    let (config, config_bytes) = RunConfig::load(&a.config)?;
    let kind = if a.levels { InputKind::Levels } else { InputKind::Returns };
    let opts = LoadOptions { kind, scale: a.scale };
    let table = load_csv(&a.input, &opts)?;
    let bytes = std::fs::read(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let input = InputInfo {
        path: a.input.display().to_string(),
        sha256: sha256_hex(&bytes),
        kind: match kind {
            InputKind::Levels => "levels",
            InputKind::Returns => "returns",
        },
        scale: a.scale,
        rows: table.len(),
    };
    Ok(Loaded { config, config_bytes, table, input })
}

fn manifest_for(command: &'static str, l: &Loaded) -> Manifest {
    let mut m = Manifest::new(command).with_config(&l.config, &l.config_bytes);
    m.input = Some(l.input.clone());
    m
}

/// Filter, write the per-step CSVs, and collect diagnostics.
fn filter_outputs(
    config: ModelConfig,
    table: &ReturnsTable,
    out: &Path,
) -> Result<(FilterRun, PerfReport, std::result::Result<LikelihoodBreakdown, giwvol::Error>)> {
    let filter = VolFilter::new(config).map_err(|e| CliError::config(e.to_string()))?;
    let run = filter.run(&table.values)?;
    let times = table.times.as_deref();
    output::write_volatility(&out.join(output::VOLATILITY_FILE), &run.records, times)?;
    output::write_forecast(&out.join(output::FORECAST_FILE), &run.records, times)?;
    let perf = perf_metrics(&run.records)?;
    let lik = loglik_of_run(&filter, &run);
    Ok((run, perf, lik))
}

pub fn run_filter_cmd(a: &DataArgs) -> Result<FilterReport> {
    let started = Instant::now();
    let l = load_inputs(a)?;
    let config = l.config.model_config(Some(l.table.dim()), false)?;
    create_out(&a.out)?;
    let (run, perf, lik) = filter_outputs(config, &l.table, &a.out)?;
    let report = FilterReport {
        command: "filter",
        n_obs: l.table.len(),
        dim: l.table.dim(),
        columns: l.table.columns.clone(),
        perf,
        loglik: lik.as_ref().ok().map(LoglikTotals::from),
        loglik_error: lik.as_ref().err().map(ToString::to_string),
        final_state: FinalState {
            m: run.state.m.iter().copied().collect(),
            s_star_vech: vech(run.state.s_star.as_matrix()),
        },
        manifest: manifest_for("filter", &l).finish(started, a.record_timing),
    };
    write_json(&a.out.join(output::REPORT_FILE), &report)?;
    Ok(report)
}

pub fn run_loglik_cmd(a: &DataArgs) -> Result<LoglikReport> {
    let started = Instant::now();
    let l = load_inputs(a)?;
    let config = l.config.model_config(Some(l.table.dim()), false)?;
    let filter = VolFilter::new(config).map_err(|e| CliError::config(e.to_string()))?;
    let run = filter.run(&l.table.values)?;
    let b = loglik_of_run(&filter, &run)?;
    create_out(&a.out)?;
    let report = LoglikReport {
        command: "loglik",
        n_obs: l.table.len(),
        dim: l.table.dim(),
        loglik: LoglikTotals::from(&b),
        manifest: manifest_for("loglik", &l).finish(started, a.record_timing),
    };
    write_json(&a.out.join(output::REPORT_FILE), &report)?;
    Ok(report)
}

pub fn run_search_cmd(a: &SearchArgs) -> Result<SearchReport> {
    let started = Instant::now();
    let l = load_inputs(&a.data)?;
    let p = l.table.dim();
    let (base, mut spec) = l.config.search_setup(p, a.objective.into(), a.jobs)?;
    spec.exhaustive = a.exhaustive;
    let found = coordinate_search(&l.table.values, &base, &spec)?;
    create_out(&a.data.out)?;
    output::write_trace(&a.data.out.join(output::TRACE_FILE), &found.trace, p)?;

    let mut best = base.clone();
    best.delta = found.delta;
    best.omega = SymPosDefMatrix::from_diagonal(&found.omega_diag)?;
    let (_, perf, lik) = filter_outputs(best, &l.table, &a.data.out)?;
    let report = SearchReport {
        command: "search",
        n_obs: l.table.len(),
        dim: p,
        columns: l.table.columns.clone(),
        search: SearchSummary {
            z: found.z.clone(),
            omega_diag: found.omega_diag.clone(),
            delta: found.delta,
            objective: found.objective,
            objective_kind: spec.objective,
            q: spec.q,
            per_delta: found.per_delta.clone(),
            evaluations: found.trace.len(),
            failed_evaluations: found.trace.iter().filter(|e| e.error.is_some()).count(),
        },
        perf,
        loglik: lik.ok().as_ref().map(LoglikTotals::from),
        manifest: manifest_for("search", &l).finish(started, a.data.record_timing),
    };
    write_json(&a.data.out.join(output::REPORT_FILE), &report)?;
    Ok(report)
}

pub fn run_simulate_cmd(a: &SimulateArgs) -> Result<SimulateReport> {
    let started = Instant::now();
    let (config, bytes) = RunConfig::load(&a.config)?;
    let delta = config.delta.ok_or_else(|| CliError::config("missing key 'delta'"))?;
    let omega = config
        .omega()?
        .ok_or_else(|| CliError::config("missing key 'omega_diag' or 'omega_matrix'"))?;
    let p = omega.nrows();
    let invalid = |e: giwvol::Error| CliError::config(e.to_string());
    let model = SimModel::new(delta, config.phi(), &omega).map_err(invalid)?;
    let sigma0 = match &config.s0 {
        Some(rows) => {
            let m = nalgebra::DMatrix::from_fn(p, p, |i, j| rows.get(i).and_then(|r| r.get(j)).copied().unwrap_or(f64::NAN));
            SymPosDefMatrix::new(m).map_err(invalid)?
        }
        None => SymPosDefMatrix::identity(p),
    };
    let theta0 = match &config.m0 {
        Some(v) if v.len() == p => DVector::from_column_slice(v),
        Some(v) => return Err(CliError::config(format!("m0 has length {}, expected {p}", v.len()))),
        None => DVector::zeros(p),
    };
    if a.steps == 0 {
        return Err(CliError::config("--steps must be positive"));
    }
    let seed = a.seed.or(config.seed).unwrap_or(0);
    let path = simulate_seeded(seed, &model, &sigma0, &theta0, a.steps)?;

    create_out(&a.out)?;
    let columns: Vec<String> = (1..=p).map(|j| format!("y_{j}")).collect();
    output::write_series(&a.out.join(output::RETURNS_FILE), &columns, &path.ys)?;
    output::write_truth(&a.out.join(output::TRUTH_FILE), &path.sigmas, &path.thetas)?;
    let mut manifest = Manifest::new("simulate").with_config(&config, &bytes);
    manifest.seed = Some(seed);
    manifest.steps = Some(a.steps);
    let report = SimulateReport {
        command: "simulate",
        n_steps: a.steps,
        dim: p,
        manifest: manifest.finish(started, a.record_timing),
    };
    write_json(&a.out.join(output::REPORT_FILE), &report)?;
    Ok(report)
}

pub fn run_metrics_cmd(a: &MetricsArgs) -> Result<MetricsReport> {
    let started = Instant::now();
    let fe = output::read_forecast(&a.input)?;
    let p = fe.e[0].len();
    let perf = perf_from_errors(&fe.e.iter().collect::<Vec<_>>(), &fe.u.iter().collect::<Vec<_>>(), p)?;
    let bytes = std::fs::read(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let mut manifest = Manifest::new("metrics");
    manifest.input = Some(InputInfo {
        path: a.input.display().to_string(),
        sha256: sha256_hex(&bytes),
        kind: "forecast",
        scale: 1.0,
        rows: fe.e.len(),
    });
    create_out(&a.out)?;
    let report = MetricsReport { command: "metrics", perf, manifest: manifest.finish(started, a.record_timing) };
    write_json(&a.out.join(output::REPORT_FILE), &report)?;
    Ok(report)
}
