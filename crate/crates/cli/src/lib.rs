//! Batch front-end: configuration, experiment orchestration and table output.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use mlsc::driver::{
    calibrate_rates, fit_loglog_slope, ml_run, sl_run, CalibrationConfig, CollocationOptions, MLResult, MlConfig,
    RateEstimates, SLResult, StochasticSampler,
};
use mlsc::pathwise::{solve_level_sequence, AdaptiveOptions, LevelSnapshot, SampleCache};
use mlsc::problems::{OnePeakProblem, PathwiseProblem};
use mlsc::smolyak::GridDump;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pathwise,
    Calibrate,
    Sl,
    Ml,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    OnePeak,
    OnePeakIsotropic,
}

impl ProblemKind {
    pub fn build(self) -> OnePeakProblem {
        match self {
            ProblemKind::OnePeak => OnePeakProblem::anisotropic(),
            ProblemKind::OnePeakIsotropic => OnePeakProblem::isotropic(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub mode: Option<Mode>,
    /// Overall tolerances of the sl, ml and sweep modes.
    pub epsilon: Vec<f64>,
    pub q: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub theta: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub s_star: f64,
    pub mu_star: f64,
    /// Parameter point of pathwise runs and of the spatial calibration study.
    pub y: Vec<f64>,
    /// Pathwise tolerances (pathwise mode, spatial calibration study).
    pub tolerances: Vec<f64>,
    pub stochastic_tols: Vec<f64>,
    /// Spatial tolerance of the stochastic calibration study.
    pub eta_x: f64,
    pub sampler: StochasticSampler,
    pub max_points: usize,
    pub max_iter: usize,
    pub out: PathBuf,
    pub dump_mesh: Option<PathBuf>,
    pub dump_grid: Option<PathBuf>,
    /// Worker threads; all numeric output is independent of this.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pathwise = AdaptiveOptions::default();
        Self {
            problem: ProblemKind::default(),
            mode: None,
            epsilon: Vec::new(),
            q: 0.2,
            k: 2,
            theta: pathwise.theta,
            c_x: 1.0,
            c_y: 0.1,
            s_star: 1.0,
            mu_star: 9.75,
            y: vec![-0.22, -0.22],
            tolerances: Vec::new(),
            stochastic_tols: vec![1e-3, 1e-4, 1e-5, 1e-6],
            eta_x: 1e-7,
            sampler: StochasticSampler::default(),
            max_points: CollocationOptions::default().max_points,
            max_iter: pathwise.max_iter,
            out: PathBuf::from("out"),
            dump_mesh: None,
            dump_grid: None,
            jobs: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn config_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(field, format!("must be positive, got {v}")))
    }
}

fn check_list(field: &str, list: &[f64], min_len: usize, decreasing: bool) -> Result<(), ConfigError> {
    if list.len() < min_len {
        return Err(config_err(field, format!("needs at least {min_len} value(s), got {}", list.len())));
    }
    for &v in list {
        check_positive(field, v)?;
    }
    if decreasing && list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(config_err(field, "must be strictly decreasing"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<Mode, ConfigError> {
        let mode = self.mode.ok_or_else(|| config_err("mode", "missing"))?;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(config_err("q", format!("must lie in (0, 1), got {}", self.q)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(config_err("theta", format!("must lie in (0, 1), got {}", self.theta)));
        }
        check_positive("c_x", self.c_x)?;
        check_positive("c_y", self.c_y)?;
        check_positive("s_star", self.s_star)?;
        check_positive("mu_star", self.mu_star)?;
        if self.max_points == 0 {
            return Err(config_err("max_points", "must be positive"));
        }
        if self.jobs == Some(0) {
            return Err(config_err("jobs", "must be positive"));
        }
        let dim = self.problem.build().param_dim();
        match mode {
            Mode::Pathwise => {
                check_list("tolerances", &self.tolerances, 1, true)?;
                if self.y.len() != dim {
                    return Err(config_err("y", format!("needs {dim} coordinates, got {}", self.y.len())));
                }
            }
            Mode::Calibrate => {
                check_list("tolerances", &self.tolerances, 3, true)?;
                check_list("stochastic_tols", &self.stochastic_tols, 3, true)?;
                check_positive("eta_x", self.eta_x)?;
                if self.y.len() != dim {
                    return Err(config_err("y", format!("needs {dim} coordinates, got {}", self.y.len())));
                }
            }
            Mode::Sl | Mode::Ml => check_list("epsilon", &self.epsilon, 1, false)?,
            Mode::Sweep => check_list("epsilon", &self.epsilon, 2, false)?,
        }
        Ok(mode)
    }

    fn pathwise_options(&self) -> AdaptiveOptions {
        AdaptiveOptions {
            theta: self.theta,
            max_iter: self.max_iter,
            ..AdaptiveOptions::default()
        }
    }

    fn collocation(&self) -> CollocationOptions {
        CollocationOptions {
            pathwise: self.pathwise_options(),
            max_points: self.max_points,
            ..CollocationOptions::default()
        }
    }

    fn ml_config(&self, epsilon: f64) -> Result<MlConfig, ConfigError> {
        let rates = RateEstimates::new(self.s_star, self.mu_star).map_err(|e| config_err("rates", e.to_string()))?;
        Ok(MlConfig {
            epsilon,
            q: self.q,
            k: self.k,
            c_x: self.c_x,
            c_y: self.c_y,
            rates,
            collocation: self.collocation(),
        })
    }
}

/// Command line: an optional JSON config file plus overrides.
#[derive(Debug, Parser)]
#[command(name = "mlsc", about = "Adaptive multilevel stochastic collocation experiments")]
pub struct Cli {
    /// JSON configuration file.
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    /// Comma-separated overall tolerances.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Comma-separated pathwise tolerances.
    #[arg(long = "tol", value_delimiter = ',')]
    pub tolerances: Option<Vec<f64>>,
    /// Comma-separated parameter point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Option<Vec<f64>>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dump_mesh: Option<PathBuf>,
    #[arg(long)]
    pub dump_grid: Option<PathBuf>,
}

impl Cli {
    pub fn into_config(self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($src:ident => $dst:ident),*) => {$(
                if let Some(v) = self.$src { cfg.$dst = v; }
            )*};
        }
        set!(problem => problem, epsilon => epsilon, tolerances => tolerances, y => y, k => k, q => q,
             theta => theta, out => out);
        if self.mode.is_some() {
            cfg.mode = self.mode;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if self.dump_mesh.is_some() {
            cfg.dump_mesh = self.dump_mesh;
        }
        if self.dump_grid.is_some() {
            cfg.dump_grid = self.dump_grid;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerics(#[from] mlsc::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub flagged: bool,
    /// One line per tolerance.
    pub summary: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.flagged)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T, report: &mut RunReport) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| RunError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))?;
    report.artifacts.push(path.to_path_buf());
    Ok(())
}

/// Runs the configured experiment and writes its artifacts under `config.out`.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    let mode = config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = config.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    pool.install(|| match mode {
        Mode::Pathwise => run_pathwise(config),
        Mode::Calibrate => run_calibrate(config),
        Mode::Sl => run_sl(config),
        Mode::Ml => run_ml(config),
        Mode::Sweep => run_sweep(config),
    })
}

#[derive(Debug, Serialize)]
struct PathwiseReport<'a> {
    problem: &'a str,
    y: &'a [f64],
    oracle: Option<f64>,
    levels: &'a [LevelSnapshot],
}

fn run_pathwise(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let problem = cfg.problem.build();
    let started = Instant::now();
    let cache = SampleCache::new();
    let r = solve_level_sequence(&problem, &cfg.y, &cfg.tolerances, &cfg.pathwise_options(), &cache, false)?;
    let oracle = problem.oracle(&cfg.y);
    let mut report = RunReport {
        flagged: r.flagged(),
        ..Default::default()
    };
    for s in &r.levels {
        let err = oracle.map_or(String::new(), |o| format!(" error={:.3e}", (s.psi - o).abs()));
        report.summary.push(format!(
            "tol={:.3e} steps={} vertices={} psi={:.10} estimate={:.3e}{err} cost={}",
            s.tol, s.iters, s.vertices, s.psi, s.estimate, s.cost
        ));
    }
    report.summary.push(format!("elapsed={:.2}s", started.elapsed().as_secs_f64()));
    let body = PathwiseReport {
        problem: problem.name(),
        y: &cfg.y,
        oracle,
        levels: &r.levels,
    };
    write_json(&cfg.out.join("pathwise.json"), &body, &mut report)?;
    if let (Some(path), Some(mesh)) = (&cfg.dump_mesh, &r.final_mesh) {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        mesh.write_ascii(&mut w, r.final_coeffs.as_deref())
            .and_then(|_| w.flush())
            .map_err(io_err(path))?;
        report.artifacts.push(path.clone());
    }
    Ok(report)
}

fn run_calibrate(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let problem = cfg.problem.build();
    let cal = calibrate_rates(
        &problem,
        &CalibrationConfig {
            y: cfg.y.clone(),
            spatial_tols: cfg.tolerances.clone(),
            eta_x: cfg.eta_x,
            stochastic_tols: cfg.stochastic_tols.clone(),
            sampler: cfg.sampler,
            collocation: cfg.collocation(),
        },
    )?;
    let mut report = RunReport {
        flagged: cal.spatial.iter().any(|s| s.flagged) || cal.stochastic.iter().any(|s| s.flagged),
        ..Default::default()
    };
    for s in &cal.stochastic {
        report.summary.push(format!(
            "eta_Y={:.3e} points={} error={:.3e}",
            s.tol, s.points, s.error
        ));
    }
    report.summary.push(format!(
        "s*={:.4} mu*={:.4}",
        cal.rates.s_star, cal.rates.mu_star
    ));
    write_json(&cfg.out.join("calibration.json"), &cal, &mut report)?;
    Ok(report)
}

fn summary_line(kind: &str, epsilon: f64, error: Option<f64>, cost: u64, secs: f64) -> String {
    let err = error.map_or("n/a".to_string(), |e| format!("{e:.3e}"));
    format!("{kind} epsilon={epsilon:.3e} error={err} cost={cost} elapsed={secs:.2}s")
}

fn dump_grids(cfg: &RunConfig, grids: &[Vec<GridDump>], report: &mut RunReport) -> Result<(), RunError> {
    if let Some(path) = &cfg.dump_grid {
        write_json(path, &grids, report)?;
    }
    Ok(())
}

fn ml_results(cfg: &RunConfig, problem: &dyn PathwiseProblem, report: &mut RunReport) -> Result<Vec<MLResult>, RunError> {
    let mut out = Vec::with_capacity(cfg.epsilon.len());
    for &eps in &cfg.epsilon {
        let started = Instant::now();
        let r = ml_run(problem, &cfg.ml_config(eps)?)?;
        report.flagged |= r.flagged;
        report
            .summary
            .push(summary_line("ml", eps, r.error, r.cost, started.elapsed().as_secs_f64()));
        out.push(r);
    }
    Ok(out)
}

fn sl_results(cfg: &RunConfig, problem: &dyn PathwiseProblem, report: &mut RunReport) -> Result<Vec<SLResult>, RunError> {
    let mut out = Vec::with_capacity(cfg.epsilon.len());
    for &eps in &cfg.epsilon {
        let started = Instant::now();
        let r = sl_run(problem, eps, cfg.c_y, &cfg.collocation())?;
        report.flagged |= r.flagged;
        report
            .summary
            .push(summary_line("sl", eps, r.error, r.cost, started.elapsed().as_secs_f64()));
        out.push(r);
    }
    Ok(out)
}

fn run_ml(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let problem = cfg.problem.build();
    let mut report = RunReport::default();
    let results = ml_results(cfg, &problem, &mut report)?;
    write_json(&cfg.out.join("ml.json"), &results, &mut report)?;
    let grids: Vec<Vec<GridDump>> = results
        .iter()
        .map(|r| r.levels.iter().filter_map(|l| l.grid.clone()).collect())
        .collect();
    dump_grids(cfg, &grids, &mut report)?;
    Ok(report)
}

fn run_sl(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let problem = cfg.problem.build();
    let mut report = RunReport::default();
    let results = sl_results(cfg, &problem, &mut report)?;
    write_json(&cfg.out.join("sl.json"), &results, &mut report)?;
    let grids: Vec<Vec<GridDump>> = results.iter().map(|r| r.grid.iter().cloned().collect()).collect();
    dump_grids(cfg, &grids, &mut report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct SweepReport<'a> {
    ml: &'a [MLResult],
    sl: &'a [SLResult],
    /// Least-squares slope of log error against log cost.
    ml_slope: Option<f64>,
    sl_slope: Option<f64>,
}

fn error_cost_slope(errors: &[f64], costs: &[f64]) -> Option<f64> {
    fit_loglog_slope(costs, errors).ok().map(|f| f.slope)
}

fn run_sweep(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let problem = cfg.problem.build();
    let mut report = RunReport::default();
    let ml = ml_results(cfg, &problem, &mut report)?;
    let sl = sl_results(cfg, &problem, &mut report)?;
    let rows: Vec<TableRow> = ml
        .iter()
        .zip(&sl)
        .map(|(m, s)| TableRow {
            epsilon: m.epsilon,
            error_ml: m.error,
            cost_ml: m.cost as f64,
            error_sl: s.error,
            cost_sl: s.cost as f64,
        })
        .collect();
    let errs = |f: fn(&TableRow) -> Option<f64>| rows.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect::<Vec<_>>();
    let ml_costs: Vec<f64> = rows.iter().map(|r| r.cost_ml).collect();
    let sl_costs: Vec<f64> = rows.iter().map(|r| r.cost_sl).collect();
    let ml_slope = error_cost_slope(&errs(|r| r.error_ml), &ml_costs);
    let sl_slope = error_cost_slope(&errs(|r| r.error_sl), &sl_costs);
    report.summary.push(format!(
        "error-vs-cost slope: ml={} sl={}",
        ml_slope.map_or("n/a".into(), |s| format!("{s:.3}")),
        sl_slope.map_or("n/a".into(), |s| format!("{s:.3}"))
    ));
    write_json(
        &cfg.out.join("sweep.json"),
        &SweepReport {
            ml: &ml,
            sl: &sl,
            ml_slope,
            sl_slope,
        },
        &mut report,
    )?;
    let table = cfg.out.join("table.csv");
    emit_table(&rows, &table).map_err(|e| match e {
        TableError::Io(source) => RunError::Io {
            path: table.clone(),
            source,
        },
        TableError::Empty => RunError::Config(config_err("epsilon", "no results to tabulate")),
    })?;
    report.artifacts.push(table);
    Ok(report)
}

/// One row of the convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub epsilon: f64,
    pub error_ml: Option<f64>,
    pub cost_ml: f64,
    pub error_sl: Option<f64>,
    pub cost_sl: f64,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("no rows to write")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Writes the convergence table as CSV, 12 significant digits, LF line endings.
pub fn emit_table(rows: &[TableRow], path: &Path) -> Result<(), TableError> {
    if rows.is_empty() {
        return Err(TableError::Empty);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io::Error::from)?;
    let io = |e: csv::Error| TableError::Io(e.into());
    w.write_record(["epsilon", "error_ml", "cost_ml", "error_sl", "cost_sl"])
        .map_err(io)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), sig12);
        w.write_record([
            sig12(r.epsilon),
            opt(r.error_ml),
            sig12(r.cost_ml),
            opt(r.error_sl),
            sig12(r.cost_sl),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
