//! Multilevel stochastic collocation: tolerance schedules, level differences built on
//! shared pathwise samples, the single-level baseline and rate calibration.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScheduleError};
use crate::pathwise::{solve_level_sequence, AdaptiveOptions, SampleCache};
use crate::problems::PathwiseProblem;
use crate::smolyak::{
    adaptive_expectation, on_tensor_grid, AdaptiveExpectation, AdaptiveGridOptions, GridDump, MultiIndex,
};

pub const DEFAULT_C_X: f64 = 1.0;
pub const DEFAULT_C_Y: f64 = 0.1;
pub const DEFAULT_Q: f64 = 0.2;
pub const DEFAULT_LEVELS: usize = 2;

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residuals in log space, one per used pair.
    pub residuals: Vec<f64>,
    pub used: usize,
}

/// Fits `log y = a + b log x`, skipping pairs that are not strictly positive and finite.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<LogLogFit, ScheduleError> {
    if x.len() != y.len() {
        return Err(ScheduleError::InvalidInput(format!(
            "fit needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let usable = |v: f64| v > 0.0 && v.is_finite();
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| usable(a) && usable(b))
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return Err(ScheduleError::InsufficientData(n));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ScheduleError::InsufficientData(1));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = pts.iter().map(|p| p.1 - intercept - slope * p.0).collect();
    Ok(LogLogFit {
        slope,
        intercept,
        residuals,
        used: n,
    })
}

/// Spatial cost rate `s*` and stochastic convergence rate `mu*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimates {
    pub s_star: f64,
    pub mu_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_fit: Option<LogLogFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic_fit: Option<LogLogFit>,
}

impl RateEstimates {
    pub fn new(s_star: f64, mu_star: f64) -> Result<Self, ScheduleError> {
        if !(s_star > 0.0 && s_star.is_finite() && mu_star > 0.0 && mu_star.is_finite()) {
            return Err(ScheduleError::InvalidInput(format!(
                "rates must be positive, got s*={s_star}, mu*={mu_star}"
            )));
        }
        Ok(Self {
            s_star,
            mu_star,
            spatial_fit: None,
            stochastic_fit: None,
        })
    }
}

/// Spatial and stochastic tolerances of every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSchedule {
    pub epsilon: f64,
    pub q: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub c_x: f64,
    pub c_y: f64,
    /// `eta_x[k]` is the spatial tolerance of level `k`.
    #[serde(rename = "eta_X")]
    pub eta_x: Vec<f64>,
    #[serde(rename = "eta_X_minus1")]
    pub eta_x_minus1: f64,
    /// `eta_y[j]` is the stochastic tolerance of level `K - j`.
    #[serde(rename = "eta_Y")]
    pub eta_y: Vec<f64>,
    /// Work weights `F_k`, by level.
    pub f: Vec<f64>,
    pub g: f64,
}

impl ToleranceSchedule {
    /// Stochastic tolerance used by the expectation of level `k`.
    pub fn level_eta_y(&self, k: usize) -> f64 {
        self.eta_y[self.k - k]
    }
}

fn positive(name: &str, v: f64) -> Result<(), ScheduleError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScheduleError::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

/// Spatial tolerance of the coarsest level, `eps / (2 C_X q^K)`.
pub fn coarse_spatial_tolerance(epsilon: f64, q: f64, k: usize, c_x: f64) -> Result<f64, ScheduleError> {
    positive("epsilon", epsilon)?;
    positive("C_X", c_x)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(ScheduleError::InvalidInput(format!("q must lie in (0, 1), got {q}")));
    }
    let k = i32::try_from(k).map_err(|_| ScheduleError::InvalidInput(format!("K too large: {k}")))?;
    Ok(epsilon / (2.0 * c_x * q.powi(k)))
}

fn work_weights(eta_x: &[f64], eta_x_minus1: f64, s: f64) -> Vec<f64> {
    (0..eta_x.len())
        .map(|k| {
            let prev = if k == 0 { eta_x_minus1 } else { eta_x[k - 1] };
            (eta_x[k].powf(-s) + prev.powf(-s)) / prev
        })
        .collect()
}

fn previous_eta(eta_x: &[f64], eta_x_minus1: f64, k: usize) -> f64 {
    if k == 0 {
        eta_x_minus1
    } else {
        eta_x[k - 1]
    }
}

fn balance_sum(f: &[f64], eta_x: &[f64], eta_x_minus1: f64, mu: f64) -> f64 {
    let a = mu / (mu + 1.0);
    f.iter()
        .enumerate()
        .map(|(k, fk)| fk.powf(a) * previous_eta(eta_x, eta_x_minus1, k))
        .sum()
}

pub fn build_schedule(
    epsilon: f64,
    q: f64,
    k: usize,
    c_x: f64,
    c_y: f64,
    rates: &RateEstimates,
    eta_x_minus1: f64,
) -> Result<ToleranceSchedule, ScheduleError> {
    let eta0 = coarse_spatial_tolerance(epsilon, q, k, c_x)?;
    positive("C_Y", c_y)?;
    positive("s*", rates.s_star)?;
    positive("mu*", rates.mu_star)?;
    positive("eta_X_minus1", eta_x_minus1)?;
    let eta_x: Vec<f64> = (0..=k).map(|j| eta0 * q.powi(j as i32)).collect();
    let f = work_weights(&eta_x, eta_x_minus1, rates.s_star);
    let g = balance_sum(&f, &eta_x, eta_x_minus1, rates.mu_star);
    let a = rates.mu_star / (rates.mu_star + 1.0);
    let mut eta_y = vec![0.0; k + 1];
    for (lvl, fk) in f.iter().enumerate() {
        eta_y[k - lvl] = fk.powf(a) * previous_eta(&eta_x, eta_x_minus1, lvl) * epsilon / (2.0 * c_y * g);
    }
    Ok(ToleranceSchedule {
        epsilon,
        q,
        k,
        c_x,
        c_y,
        eta_x,
        eta_x_minus1,
        eta_y,
        f,
        g,
    })
}

/// Rounds a real sample count up.
pub fn round_up_count(m: f64) -> u64 {
    m.ceil().max(0.0) as u64
}

/// Optimal sample counts per level, as reals and rounded up. Entry `k` is the count
/// paired with spatial level `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub real: Vec<f64>,
    pub rounded: Vec<u64>,
}

pub fn optimal_sample_counts(
    schedule: &ToleranceSchedule,
    rates: &RateEstimates,
    c_i: f64,
) -> Result<SampleCounts, ScheduleError> {
    positive("C_I", c_i)?;
    let mu = rates.mu_star;
    let f = work_weights(&schedule.eta_x, schedule.eta_x_minus1, rates.s_star);
    let g = balance_sum(&f, &schedule.eta_x, schedule.eta_x_minus1, mu);
    let scale = (2.0 * c_i * g).powf(1.0 / mu) * schedule.epsilon.powf(-1.0 / mu);
    let real: Vec<f64> = f.iter().map(|fk| scale * fk.powf(-1.0 / (mu + 1.0))).collect();
    let rounded = real.iter().map(|&m| round_up_count(m)).collect();
    Ok(SampleCounts { real, rounded })
}

/// Settings shared by the multilevel and single-level runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollocationOptions {
    pub pathwise: AdaptiveOptions,
    /// Point budget of every adaptive grid.
    pub max_points: usize,
    /// Trajectory end states are kept for the next level only at points of the
    /// tensor grid of this level; elsewhere the next level restarts the trajectory.
    pub frontier_level: u32,
}

impl Default for CollocationOptions {
    fn default() -> Self {
        Self {
            pathwise: AdaptiveOptions::default(),
            max_points: 100_000,
            frontier_level: 4,
        }
    }
}

fn grid_options(tol: f64, opts: &CollocationOptions) -> AdaptiveGridOptions {
    AdaptiveGridOptions {
        max_points: opts.max_points,
        ..AdaptiveGridOptions::new(tol)
    }
}

/// Expectation of `psi(u_k) - psi(u_{k-1})` (or `psi(u_0)`) over the parameter box, with
/// pathwise tolerances `tols = [eta_X0, .., eta_Xk]`.
fn level_expectation(
    problem: &dyn PathwiseProblem,
    tols: &[f64],
    stoch_tol: f64,
    opts: &CollocationOptions,
    cache: &SampleCache,
    keep_frontier: bool,
) -> Result<(AdaptiveExpectation, bool)> {
    let k = tols.len() - 1;
    let bounds = problem.param_bounds();
    let pathwise_flag = AtomicBool::new(false);
    let g = |y: &[f64]| -> Result<f64> {
        let keep = keep_frontier && on_tensor_grid(y, &bounds, opts.frontier_level);
        let r = solve_level_sequence(problem, y, tols, &opts.pathwise, cache, keep)?;
        if r.flagged() {
            pathwise_flag.store(true, Ordering::Relaxed);
        }
        Ok(if k == 0 { r.psi(0) } else { r.psi(k) - r.psi(k - 1) })
    };
    let e = adaptive_expectation(&g, &bounds, &grid_options(stoch_tol, opts))?;
    let flagged = e.flagged || pathwise_flag.load(Ordering::Relaxed);
    Ok((e, flagged))
}

/// The coarse-level expectation that stands in for `eta_X_{-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub value: f64,
    pub points: usize,
    pub last_profit: f64,
    pub cost: u64,
    pub flagged: bool,
}

/// `E[psi(u_0)]` with spatial and stochastic tolerance `eta_x0`; samples stay in `cache`.
pub fn bootstrap_eta_x_minus1(
    problem: &dyn PathwiseProblem,
    eta_x0: f64,
    opts: &CollocationOptions,
    cache: &SampleCache,
    keep_frontier: bool,
) -> Result<Bootstrap> {
    let before = cache.counters().dofs();
    let (e, flagged) = level_expectation(problem, &[eta_x0], eta_x0, opts, cache, keep_frontier)?;
    Ok(Bootstrap {
        value: e.value,
        points: e.points_total,
        last_profit: e.last_max_profit,
        cost: cache.counters().dofs() - before,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub k: usize,
    #[serde(rename = "E_k")]
    pub e_k: f64,
    /// Collocation points explored, margin included.
    #[serde(rename = "M_k")]
    pub m_k: usize,
    /// Free degrees of freedom solved for while computing this level.
    pub cost: u64,
    pub last_profit: f64,
    pub flagged: bool,
    #[serde(skip)]
    pub grid: Option<GridDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLResult {
    pub epsilon: f64,
    pub q: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub schedule: ToleranceSchedule,
    pub bootstrap: Bootstrap,
    pub levels: Vec<LevelResult>,
    pub total: f64,
    /// `C_X eta_X,K` plus the last profits of all levels.
    pub error_indicator: f64,
    /// Free degrees of freedom over the whole run, bootstrap included.
    pub cost: u64,
    pub solves: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlConfig {
    pub epsilon: f64,
    pub q: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub c_x: f64,
    pub c_y: f64,
    pub rates: RateEstimates,
    pub collocation: CollocationOptions,
}

impl MlConfig {
    pub fn new(epsilon: f64, rates: RateEstimates) -> Self {
        Self {
            epsilon,
            q: DEFAULT_Q,
            k: DEFAULT_LEVELS,
            c_x: DEFAULT_C_X,
            c_y: DEFAULT_C_Y,
            rates,
            collocation: CollocationOptions::default(),
        }
    }
}

pub fn ml_run(problem: &dyn PathwiseProblem, cfg: &MlConfig) -> Result<MLResult> {
    ml_run_with_cache(problem, cfg, &SampleCache::new())
}

/// [`ml_run`] on a caller-provided cache, whose counters then account for the run.
pub fn ml_run_with_cache(problem: &dyn PathwiseProblem, cfg: &MlConfig, cache: &SampleCache) -> Result<MLResult> {
    let eta0 = coarse_spatial_tolerance(cfg.epsilon, cfg.q, cfg.k, cfg.c_x)?;
    let start_dofs = cache.counters().dofs();
    let start_solves = cache.counters().solves();
    let bootstrap = bootstrap_eta_x_minus1(problem, eta0, &cfg.collocation, cache, cfg.k > 0)?;
    if !(bootstrap.value > 0.0) {
        cache.clear_frontiers();
        return Err(ScheduleError::InvalidInput(format!(
            "bootstrap expectation must be positive to serve as a tolerance, got {}",
            bootstrap.value
        ))
        .into());
    }
    let schedule = build_schedule(cfg.epsilon, cfg.q, cfg.k, cfg.c_x, cfg.c_y, &cfg.rates, bootstrap.value)?;

    let mut levels = Vec::with_capacity(cfg.k + 1);
    for k in 0..=cfg.k {
        let before = cache.counters().dofs();
        let run = level_expectation(
            problem,
            &schedule.eta_x[..=k],
            schedule.level_eta_y(k),
            &cfg.collocation,
            cache,
            k < cfg.k,
        );
        let (e, flagged) = match run {
            Ok(v) => v,
            Err(err) => {
                cache.clear_frontiers();
                return Err(err);
            }
        };
        levels.push(LevelResult {
            k,
            e_k: e.value,
            m_k: e.points_total,
            cost: cache.counters().dofs() - before,
            last_profit: e.last_max_profit,
            flagged,
            grid: Some(e.state.dump()),
        });
    }
    cache.clear_frontiers();

    let mut total = 0.0;
    for l in &levels {
        total += l.e_k;
    }
    let error_indicator = cfg.c_x * schedule.eta_x[cfg.k] + levels.iter().map(|l| l.last_profit).sum::<f64>();
    let reference = problem.reference();
    Ok(MLResult {
        epsilon: cfg.epsilon,
        q: cfg.q,
        k: cfg.k,
        flagged: bootstrap.flagged || levels.iter().any(|l| l.flagged),
        schedule,
        bootstrap,
        levels,
        total,
        error_indicator,
        cost: cache.counters().dofs() - start_dofs,
        solves: cache.counters().solves() - start_solves,
        error: reference.map(|r| (total - r).abs()),
        reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SLResult {
    pub epsilon: f64,
    #[serde(rename = "eta_X")]
    pub eta_x: f64,
    #[serde(rename = "eta_Y")]
    pub eta_y: f64,
    pub value: f64,
    pub points: usize,
    pub last_profit: f64,
    pub error_indicator: f64,
    pub cost: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    pub flagged: bool,
    #[serde(skip)]
    pub grid: Option<GridDump>,
}

/// One adaptive expectation of `psi(u)` with `eta_X = eps/2` and `eta_Y = eps/(2 C_Y)`.
pub fn sl_run(problem: &dyn PathwiseProblem, epsilon: f64, c_y: f64, opts: &CollocationOptions) -> Result<SLResult> {
    positive("epsilon", epsilon)?;
    positive("C_Y", c_y)?;
    let eta_x = epsilon / 2.0;
    let eta_y = epsilon / (2.0 * c_y);
    let cache = SampleCache::new();
    let (e, flagged) = level_expectation(problem, &[eta_x], eta_y, opts, &cache, false)?;
    let reference = problem.reference();
    Ok(SLResult {
        epsilon,
        eta_x,
        eta_y,
        value: e.value,
        points: e.points_total,
        last_profit: e.last_max_profit,
        error_indicator: eta_x + e.last_max_profit,
        cost: cache.counters().dofs(),
        error: reference.map(|r| (e.value - r).abs()),
        reference,
        flagged,
        grid: Some(e.state.dump()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSample {
    pub tol: f64,
    pub psi: f64,
    pub error: f64,
    pub estimate: f64,
    pub cost: u64,
    pub vertices: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSample {
    pub tol: f64,
    pub value: f64,
    pub error: f64,
    pub points: usize,
    /// The final index set, in lexicographic order.
    pub indices: Vec<MultiIndex>,
    pub flagged: bool,
}

/// Pathwise accuracy against cost along one refinement trajectory at `y`.
pub fn spatial_study(
    problem: &dyn PathwiseProblem,
    y: &[f64],
    tols: &[f64],
    opts: &AdaptiveOptions,
) -> Result<Vec<SpatialSample>> {
    let exact = problem
        .oracle(y)
        .ok_or_else(|| Error::Unsupported(format!("{} has no pathwise oracle", problem.name())))?;
    let cache = SampleCache::new();
    let r = solve_level_sequence(problem, y, tols, opts, &cache, false)?;
    Ok(r.levels
        .iter()
        .map(|s| SpatialSample {
            tol: s.tol,
            psi: s.psi,
            error: (s.psi - exact).abs(),
            estimate: s.estimate,
            cost: s.cost,
            vertices: s.vertices,
            flagged: s.flagged,
        })
        .collect())
}

/// Source of the pathwise values fed to the stochastic study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticSampler {
    /// Adaptive finite elements at the study's spatial tolerance.
    #[default]
    FiniteElement,
    /// The problem's closed-form pathwise value.
    Oracle,
}

/// Adaptive expectations at decreasing stochastic tolerances, all sharing one cache.
pub fn stochastic_study(
    problem: &dyn PathwiseProblem,
    eta_x: f64,
    tols: &[f64],
    sampler: StochasticSampler,
    opts: &CollocationOptions,
) -> Result<Vec<StochasticSample>> {
    let reference = problem
        .reference()
        .ok_or_else(|| Error::Unsupported(format!("{} has no reference expectation", problem.name())))?;
    let cache = SampleCache::new();
    let bounds = problem.param_bounds();
    let mut out = Vec::with_capacity(tols.len());
    for &tol in tols {
        let pathwise_flag = AtomicBool::new(false);
        let g = |y: &[f64]| -> Result<f64> {
            match sampler {
                StochasticSampler::Oracle => problem
                    .oracle(y)
                    .ok_or_else(|| Error::Unsupported(format!("{} has no pathwise oracle", problem.name()))),
                StochasticSampler::FiniteElement => {
                    let r = solve_level_sequence(problem, y, &[eta_x], &opts.pathwise, &cache, false)?;
                    if r.flagged() {
                        pathwise_flag.store(true, Ordering::Relaxed);
                    }
                    Ok(r.psi(0))
                }
            }
        };
        let e = adaptive_expectation(&g, &bounds, &grid_options(tol, opts))?;
        out.push(StochasticSample {
            tol,
            value: e.value,
            error: (e.value - reference).abs(),
            points: e.points_total,
            indices: e.index_set.iter().cloned().collect(),
            flagged: e.flagged || pathwise_flag.load(Ordering::Relaxed),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Parameter point of the spatial study.
    pub y: Vec<f64>,
    pub spatial_tols: Vec<f64>,
    /// Spatial tolerance of the stochastic study.
    pub eta_x: f64,
    pub stochastic_tols: Vec<f64>,
    pub sampler: StochasticSampler,
    pub collocation: CollocationOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub rates: RateEstimates,
    pub spatial: Vec<SpatialSample>,
    pub stochastic: Vec<StochasticSample>,
}

fn check_study_tols(name: &str, tols: &[f64]) -> Result<(), ScheduleError> {
    if tols.len() < 3 {
        return Err(ScheduleError::InvalidInput(format!("{name} needs at least 3 tolerances")));
    }
    if tols.iter().any(|&t| !(t > 0.0 && t.is_finite())) || tols.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ScheduleError::InvalidInput(format!(
            "{name} must be positive and strictly decreasing: {tols:?}"
        )));
    }
    Ok(())
}

/// `s*` from log cost against log error of a pathwise study, `mu*` from log error
/// against log point count of a stochastic study.
pub fn calibrate_rates(problem: &dyn PathwiseProblem, cfg: &CalibrationConfig) -> Result<Calibration> {
    check_study_tols("spatial study", &cfg.spatial_tols)?;
    check_study_tols("stochastic study", &cfg.stochastic_tols)?;
    positive("eta_X", cfg.eta_x)?;
    let spatial = spatial_study(problem, &cfg.y, &cfg.spatial_tols, &cfg.collocation.pathwise)?;
    let stochastic = stochastic_study(problem, cfg.eta_x, &cfg.stochastic_tols, cfg.sampler, &cfg.collocation)?;
    let rates = rates_from_studies(&spatial, &stochastic)?;
    Ok(Calibration {
        rates,
        spatial,
        stochastic,
    })
}

/// Fits both rates from finished studies.
pub fn rates_from_studies(spatial: &[SpatialSample], stochastic: &[StochasticSample]) -> Result<RateEstimates> {
    let err: Vec<f64> = spatial.iter().map(|s| s.error).collect();
    let cost: Vec<f64> = spatial.iter().map(|s| s.cost as f64).collect();
    let s_fit = fit_loglog_slope(&err, &cost)?;
    let pts: Vec<f64> = stochastic.iter().map(|s| s.points as f64).collect();
    let e: Vec<f64> = stochastic.iter().map(|s| s.error).collect();
    let mu_fit = fit_loglog_slope(&pts, &e)?;
    let mut rates = RateEstimates::new(-s_fit.slope, -mu_fit.slope)?;
    rates.spatial_fit = Some(s_fit);
    rates.stochastic_fit = Some(mu_fit);
    Ok(rates)
}
