//! The SOLVE, ESTIMATE, MARK, REFINE loop for one parameter value, and the nested
//! level hierarchy obtained by snapshotting one refinement trajectory at a decreasing
//! sequence of tolerances.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FemError, Result};
use crate::fem::{assemble_system, integrate_square, DEFAULT_QUAD_DEGREE, SOLVER_TOLERANCE};
use crate::goal_estimator::{dorfler_mark, dual_rhs, element_indicators, hierarchical_dual_weight};
use crate::mesh::{midpoint_prolongate, MarkedRefinement, TriMesh};
use crate::multigrid::MultigridHierarchy;
use crate::problems::PathwiseProblem;
use crate::quadrature::rule_for_degree;
use crate::sparse::pcg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOptions {
    pub theta: f64,
    pub max_iter: usize,
    pub quad_degree: usize,
    #[serde(default)]
    pub refinement: MarkedRefinement,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            theta: 0.6,
            max_iter: 30,
            quad_degree: DEFAULT_QUAD_DEGREE,
            refinement: MarkedRefinement::default(),
        }
    }
}

/// One level of a trajectory: the first mesh whose estimate met `tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSnapshot {
    pub tol: f64,
    pub vertices: usize,
    pub psi: f64,
    pub estimate: f64,
    /// Refinement steps taken from the initial mesh.
    pub iters: usize,
    /// Cumulative free degrees of freedom over all solves of the trajectory.
    pub cost: u64,
    /// Set when `max_iter` was reached before the estimate met `tol`.
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathwiseResult {
    pub y: Vec<f64>,
    pub levels: Vec<LevelSnapshot>,
    #[serde(skip)]
    pub final_mesh: Option<Arc<TriMesh>>,
    #[serde(skip)]
    pub final_coeffs: Option<Vec<f64>>,
}

impl PathwiseResult {
    pub fn flagged(&self) -> bool {
        self.levels.iter().any(|l| l.flagged)
    }

    pub fn psi(&self, level: usize) -> f64 {
        self.levels[level].psi
    }
}

/// Work counters shared by all trajectories of a run.
#[derive(Debug, Default)]
pub struct SolveCounters {
    solves: AtomicU64,
    dofs: AtomicU64,
    snapshots: AtomicU64,
}

impl SolveCounters {
    pub fn solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn dofs(&self) -> u64 {
        self.dofs.load(Ordering::Relaxed)
    }

    /// Snapshots written to a cache, counting overwrites.
    pub fn snapshots(&self) -> u64 {
        self.snapshots.load(Ordering::Relaxed)
    }

    fn record(&self, free: usize) {
        self.solves.fetch_add(1, Ordering::Relaxed);
        self.dofs.fetch_add(free as u64, Ordering::Relaxed);
    }
}

/// State of a refinement trajectory at its current (solved and estimated) mesh.
#[derive(Debug)]
pub struct TrajectoryState {
    mesh: Arc<TriMesh>,
    rhs: Vec<f64>,
    dirichlet: Vec<bool>,
    hierarchy: MultigridHierarchy,
    u: Vec<f64>,
    w: Vec<f64>,
    indicators: Vec<f64>,
    psi: f64,
    estimate: f64,
    iters: usize,
    cost: u64,
}

impl TrajectoryState {
    pub fn start(
        problem: &dyn PathwiseProblem,
        y: &[f64],
        opts: &AdaptiveOptions,
        counters: &SolveCounters,
    ) -> Result<Self> {
        let mesh = problem.initial_mesh();
        let source = |x: [f64; 2]| problem.source(x, y);
        let system = assemble_system(&mesh, &source, opts.quad_degree)?;
        let n = mesh.n_vertices();
        let mut state = Self {
            hierarchy: MultigridHierarchy::new(system.matrix, system.dirichlet.clone())?,
            mesh,
            rhs: system.rhs,
            dirichlet: system.dirichlet,
            u: vec![0.0; n],
            w: vec![0.0; n],
            indicators: Vec::new(),
            psi: 0.0,
            estimate: f64::INFINITY,
            iters: 0,
            cost: 0,
        };
        state.solve_and_estimate(problem, y, opts, counters)?;
        Ok(state)
    }

    fn solve_and_estimate(
        &mut self,
        problem: &dyn PathwiseProblem,
        y: &[f64],
        opts: &AdaptiveOptions,
        counters: &SolveCounters,
    ) -> Result<()> {
        let free = self.dirichlet.iter().filter(|&&d| !d).count();
        let cap = 10 * free.max(1);
        let a = self.hierarchy.finest_matrix();
        let rhs = std::mem::take(&mut self.rhs);
        pcg(a, &rhs, &mut self.u, &self.hierarchy, SOLVER_TOLERANCE, cap)?;
        let dual = dual_rhs(&self.mesh, &self.u, &self.dirichlet);
        pcg(a, &dual, &mut self.w, &self.hierarchy, SOLVER_TOLERANCE, cap)?;
        counters.record(free);
        self.cost += free as u64;

        let source = |x: [f64; 2]| problem.source(x, y);
        let rule = rule_for_degree(opts.quad_degree)?;
        let weight = hierarchical_dual_weight(&self.mesh, &self.u, &self.w)?;
        let field = element_indicators(&self.mesh, &self.u, &weight, &source, &rule)?;
        self.psi = integrate_square(&self.mesh, &self.u);
        self.estimate = field.global_estimate;
        self.indicators = field.per_element;
        Ok(())
    }

    /// One MARK, REFINE, SOLVE, ESTIMATE round.
    pub fn advance(
        &mut self,
        problem: &dyn PathwiseProblem,
        y: &[f64],
        opts: &AdaptiveOptions,
        counters: &SolveCounters,
    ) -> Result<()> {
        let marked = dorfler_mark(&self.indicators, opts.theta)?;
        let (fine, record) = self.mesh.refine_nvb_with(&marked, opts.refinement)?;
        let fine = Arc::new(fine);
        self.u = midpoint_prolongate(&self.u, &record)?;
        self.w = midpoint_prolongate(&self.w, &record)?;
        let source = |x: [f64; 2]| problem.source(x, y);
        let system = assemble_system(&fine, &source, opts.quad_degree)?;
        self.hierarchy.push(&record, system.matrix, system.dirichlet.clone());
        self.rhs = system.rhs;
        self.dirichlet = system.dirichlet;
        self.mesh = fine;
        self.iters += 1;
        self.solve_and_estimate(problem, y, opts, counters)
    }

    /// Refines until the estimate meets `tol` or `max_iter` steps have been taken.
    pub fn run_to(
        &mut self,
        problem: &dyn PathwiseProblem,
        y: &[f64],
        tol: f64,
        opts: &AdaptiveOptions,
        counters: &SolveCounters,
    ) -> Result<LevelSnapshot> {
        while self.estimate > tol && self.iters < opts.max_iter {
            self.advance(problem, y, opts, counters)?;
        }
        Ok(self.snapshot(tol))
    }

    pub fn snapshot(&self, tol: f64) -> LevelSnapshot {
        LevelSnapshot {
            tol,
            vertices: self.mesh.n_vertices(),
            psi: self.psi,
            estimate: self.estimate,
            iters: self.iters,
            cost: self.cost,
            flagged: !(self.estimate <= tol),
        }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.u
    }

    pub fn indicators(&self) -> &[f64] {
        &self.indicators
    }
}

/// Canonical text form of a parameter point: every coordinate with 17 significant digits.
pub fn canonical_key(y: &[f64]) -> String {
    let parts: Vec<String> = y.iter().map(|v| format!("{v:.16e}")).collect();
    parts.join(",")
}

struct Frontier {
    /// Smallest tolerance already snapshotted from this state.
    tol: f64,
    state: TrajectoryState,
}

/// Level snapshots keyed by (parameter point, tolerance), plus the resumable end
/// state of each trajectory that may still be extended.
#[derive(Default)]
pub struct SampleCache {
    snapshots: Mutex<HashMap<(String, String), LevelSnapshot>>,
    frontiers: Mutex<HashMap<String, Frontier>>,
    counters: SolveCounters,
}

impl SampleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> &SolveCounters {
        &self.counters
    }

    pub fn len(&self) -> usize {
        self.snapshots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, y: &[f64], tol: f64) -> Option<LevelSnapshot> {
        let key = (canonical_key(y), format!("{tol:.16e}"));
        self.snapshots.lock().unwrap().get(&key).cloned()
    }

    fn insert(&self, y_key: &str, snap: &LevelSnapshot) {
        let key = (y_key.to_string(), format!("{:.16e}", snap.tol));
        self.counters.snapshots.fetch_add(1, Ordering::Relaxed);
        self.snapshots.lock().unwrap().insert(key, snap.clone());
    }

    /// Drops every stored trajectory end state.
    pub fn clear_frontiers(&self) {
        self.frontiers.lock().unwrap().clear();
    }

    pub fn frontier_count(&self) -> usize {
        self.frontiers.lock().unwrap().len()
    }
}

impl std::fmt::Debug for SampleCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampleCache")
            .field("snapshots", &self.len())
            .field("frontiers", &self.frontier_count())
            .field("counters", &self.counters)
            .finish()
    }
}

fn validate_tolerances(tols: &[f64]) -> Result<()> {
    if tols.is_empty() {
        return Err(Error::Unsupported("empty tolerance list".into()));
    }
    if tols.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Unsupported(format!("tolerances must be positive: {tols:?}")));
    }
    if tols.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Unsupported(format!("tolerances must strictly decrease: {tols:?}")));
    }
    Ok(())
}

/// Runs one adaptive trajectory to a single tolerance.
pub fn adaptive_solve(
    problem: &dyn PathwiseProblem,
    y: &[f64],
    tol: f64,
    opts: &AdaptiveOptions,
) -> Result<PathwiseResult> {
    validate_tolerances(&[tol])?;
    if !(opts.theta > 0.0 && opts.theta < 1.0) {
        return Err(FemError::InvalidTheta(opts.theta).into());
    }
    let counters = SolveCounters::default();
    let mut state = TrajectoryState::start(problem, y, opts, &counters)?;
    let snap = state.run_to(problem, y, tol, opts, &counters)?;
    Ok(PathwiseResult {
        y: y.to_vec(),
        levels: vec![snap],
        final_coeffs: Some(state.u),
        final_mesh: Some(state.mesh),
    })
}

/// Snapshots one trajectory at every tolerance of a strictly decreasing list.
///
/// Cached snapshots are reused; a stored end state is resumed when every missing
/// tolerance lies below the ones it already served. With `keep_frontier` the end state
/// is stored for later extension.
pub fn solve_level_sequence(
    problem: &dyn PathwiseProblem,
    y: &[f64],
    tols: &[f64],
    opts: &AdaptiveOptions,
    cache: &SampleCache,
    keep_frontier: bool,
) -> Result<PathwiseResult> {
    validate_tolerances(tols)?;
    if !(opts.theta > 0.0 && opts.theta < 1.0) {
        return Err(FemError::InvalidTheta(opts.theta).into());
    }
    let y_key = canonical_key(y);
    let cached: Vec<Option<LevelSnapshot>> = tols.iter().map(|&t| cache.get(y, t)).collect();
    let Some(first_missing) = cached.iter().position(Option::is_none) else {
        return Ok(PathwiseResult {
            y: y.to_vec(),
            levels: cached.into_iter().flatten().collect(),
            final_mesh: None,
            final_coeffs: None,
        });
    };

    let resumed = {
        let mut frontiers = cache.frontiers.lock().unwrap();
        match frontiers.get(&y_key) {
            Some(f) if tols[first_missing] < f.tol => frontiers.remove(&y_key),
            _ => None,
        }
    };
    let (mut state, resume_tol) = match resumed {
        Some(f) => (f.state, f.tol),
        None => (TrajectoryState::start(problem, y, opts, &cache.counters)?, f64::INFINITY),
    };

    let mut levels = Vec::with_capacity(tols.len());
    for (k, &tol) in tols.iter().enumerate() {
        match &cached[k] {
            Some(snap) if tol >= resume_tol => levels.push(snap.clone()),
            _ => {
                let snap = state.run_to(problem, y, tol, opts, &cache.counters)?;
                cache.insert(&y_key, &snap);
                levels.push(snap);
            }
        }
    }
    let last_tol = *tols.last().expect("validated non-empty");
    let result = PathwiseResult {
        y: y.to_vec(),
        levels,
        final_mesh: Some(Arc::clone(&state.mesh)),
        final_coeffs: Some(state.u.clone()),
    };
    if keep_frontier {
        cache
            .frontiers
            .lock()
            .unwrap()
            .insert(y_key, Frontier { tol: last_tol, state });
    }
    Ok(result)
}
