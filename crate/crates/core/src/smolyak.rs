//! Dimension-adaptive Smolyak quadrature and interpolation on nested
//! Clenshaw-Curtis nodes.
//!
//! The index set grows by the reduced margin: at every step all admissible neighbours
//! of the current set carry their hierarchical surplus (profit); the one with the
//! largest profit joins the set. The loop stops as soon as the largest margin profit
//! drops below the tolerance, and the value accumulated over the index set alone is
//! returned; the final margin profits only serve as the error indicator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SmolyakError};

/// Levels per dimension, all at least one. Ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn ones(dim: usize) -> Self {
        Self(vec![1; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn forward(&self, n: usize) -> Self {
        let mut next = self.0.clone();
        next[n] += 1;
        Self(next)
    }

    pub fn backward(&self, n: usize) -> Option<Self> {
        (self.0[n] > 1).then(|| {
            let mut prev = self.0.clone();
            prev[n] -= 1;
            Self(prev)
        })
    }
}

/// Downward-closed set of multi-indices containing the all-ones index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    dim: usize,
    members: BTreeSet<MultiIndex>,
}

impl IndexSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            members: BTreeSet::from([MultiIndex::ones(dim)]),
        }
    }

    /// Builds a set from explicit members, rejecting sets that are not downward closed.
    pub fn from_members(dim: usize, members: impl IntoIterator<Item = MultiIndex>) -> Result<Self, SmolyakError> {
        let mut set = Self::new(dim);
        for m in members {
            if m.dim() != dim {
                return Err(SmolyakError::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
            if m.0.contains(&0) {
                return Err(SmolyakError::InvalidLevel(0));
            }
            set.members.insert(m);
        }
        if let Some(bad) = set.first_violation() {
            return Err(SmolyakError::NotDownwardClosed(format!("{:?}", bad.0)));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: &MultiIndex) -> bool {
        self.members.contains(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.members.iter()
    }

    /// True if every backward neighbour of `i` lies in the set.
    pub fn is_admissible(&self, i: &MultiIndex) -> bool {
        (0..self.dim).all(|n| i.backward(n).is_none_or(|b| self.members.contains(&b)))
    }

    fn first_violation(&self) -> Option<&MultiIndex> {
        self.members.iter().find(|i| !self.is_admissible(i))
    }

    pub fn is_downward_closed(&self) -> bool {
        self.members.contains(&MultiIndex::ones(self.dim)) && self.first_violation().is_none()
    }

    /// Adds an admissible index.
    pub fn insert(&mut self, i: MultiIndex) -> Result<(), SmolyakError> {
        if !self.is_admissible(&i) {
            return Err(SmolyakError::NotDownwardClosed(format!("{:?}", i.0)));
        }
        self.members.insert(i);
        Ok(())
    }

    /// All indices outside the set with at least one backward neighbour inside.
    pub fn margin(&self) -> BTreeSet<MultiIndex> {
        let mut out = BTreeSet::new();
        for i in &self.members {
            for n in 0..self.dim {
                let f = i.forward(n);
                if !self.members.contains(&f) {
                    out.insert(f);
                }
            }
        }
        out
    }

    /// The admissible part of the margin.
    pub fn reduced_margin(&self) -> BTreeSet<MultiIndex> {
        self.margin().into_iter().filter(|i| self.is_admissible(i)).collect()
    }
}

/// Number of nodes on a level: 1, 3, 5, 9, 17, ...
pub fn cc_points(level: u32) -> usize {
    if level <= 1 {
        1
    } else {
        (1usize << (level - 1)) + 1
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Node `j` of the `n + 1`-point rule, `-cos(pi j / n)`. The fraction is reduced first
/// so that a node shared by several levels has identical bits on all of them.
fn cc_node(j: usize, n: usize) -> f64 {
    if n == 0 || 2 * j == n {
        return 0.0;
    }
    let g = gcd(j, n);
    let (j, n) = (j / g, n / g);
    if 2 * j < n {
        -(PI * j as f64 / n as f64).cos()
    } else {
        (PI * (n - j) as f64 / n as f64).cos()
    }
}

/// Nodes (ascending) and weights for the uniform density `1/2` on `[-1, 1]`.
pub fn cc_rule(level: u32) -> Result<(Vec<f64>, Vec<f64>), SmolyakError> {
    if level < 1 {
        return Err(SmolyakError::InvalidLevel(level));
    }
    let m = cc_points(level);
    if m == 1 {
        return Ok((vec![0.0], vec![1.0]));
    }
    let n = m - 1;
    let nodes = (0..m).map(|j| cc_node(j, n)).collect();
    let mut weights = vec![0.0; m];
    for j in 0..=n / 2 {
        let theta = PI * j as f64 / n as f64;
        let mut s = 1.0;
        for k in 1..=n / 2 {
            let b = if 2 * k == n { 1.0 } else { 2.0 };
            s -= b / (4.0 * (k * k) as f64 - 1.0) * (2.0 * k as f64 * theta).cos();
        }
        let c = if j == 0 { 1.0 } else { 2.0 };
        weights[j] = 0.5 * c / n as f64 * s;
        weights[n - j] = weights[j];
    }
    Ok((nodes, weights))
}

/// Per-level nodes, weights and difference weights `w_i - w_{i-1}` (on level-`i` nodes).
#[derive(Debug, Clone, Default)]
struct RuleTable {
    nodes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    diff: Vec<Vec<f64>>,
}

impl RuleTable {
    fn ensure(&mut self, level: u32) {
        while self.nodes.len() < level as usize {
            let l = self.nodes.len() as u32 + 1;
            let (nodes, weights) = cc_rule(l).expect("level is positive");
            let mut diff = weights.clone();
            if l == 2 {
                diff[1] -= 1.0;
            } else if l > 2 {
                for (j, d) in diff.iter_mut().enumerate().step_by(2) {
                    *d -= self.weights[l as usize - 2][j / 2];
                }
            }
            self.nodes.push(nodes);
            self.weights.push(weights);
            self.diff.push(diff);
        }
    }

    fn nodes(&self, level: u32) -> &[f64] {
        &self.nodes[level as usize - 1]
    }

    fn diff(&self, level: u32) -> &[f64] {
        &self.diff[level as usize - 1]
    }
}

/// Calls `f` with the per-dimension node positions of every tensor point, in
/// lexicographic order.
fn for_each_tensor_point(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    let mut pos = vec![0usize; sizes.len()];
    loop {
        f(&pos);
        let mut n = sizes.len();
        loop {
            if n == 0 {
                return;
            }
            n -= 1;
            pos[n] += 1;
            if pos[n] < sizes[n] {
                break;
            }
            pos[n] = 0;
        }
    }
}

fn validate_bounds(dim: usize, bounds: &[[f64; 2]]) -> Result<(), SmolyakError> {
    if bounds.len() != dim {
        return Err(SmolyakError::DimensionMismatch {
            expected: dim,
            got: bounds.len(),
        });
    }
    for (n, b) in bounds.iter().enumerate() {
        if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
            return Err(SmolyakError::InvalidBounds(format!("dimension {n}: {b:?}")));
        }
    }
    Ok(())
}

fn map_coordinate(t: f64, b: [f64; 2]) -> f64 {
    if t == 0.0 {
        0.5 * (b[0] + b[1])
    } else {
        b[0] + 0.5 * (t + 1.0) * (b[1] - b[0])
    }
}

/// Whether every coordinate of `y` is a node of the level-`level` rule mapped to its
/// interval. Nested nodes are bitwise identical across levels, so the test is exact.
pub fn on_tensor_grid(y: &[f64], bounds: &[[f64; 2]], level: u32) -> bool {
    let Ok((nodes, _)) = cc_rule(level) else {
        return false;
    };
    y.len() == bounds.len()
        && y
            .iter()
            .zip(bounds)
            .all(|(&v, &b)| nodes.iter().any(|&t| map_coordinate(t, b) == v))
}

type PointKey = Vec<u64>;

fn point_key(p: &[f64]) -> PointKey {
    p.iter().map(|v| v.to_bits()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurplusStatus {
    Active,
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusRecord {
    pub index: MultiIndex,
    /// Contribution of the tensor difference rule to the expectation.
    pub delta_value: f64,
    /// Points first evaluated for this index.
    pub new_points: usize,
    pub status: SurplusStatus,
}

/// Scalar integrand evaluated at points of the parameter box.
pub type Integrand<'a> = dyn Fn(&[f64]) -> Result<f64> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGridOptions {
    pub tol: f64,
    pub max_points: usize,
    pub max_steps: usize,
    /// Select by profit per new point instead of plain profit.
    pub cost_weighted: bool,
}

impl AdaptiveGridOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_points: 1_000_000,
            max_steps: 100_000,
            cost_weighted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// An index moved from the margin into the set.
    Refined,
    /// The largest margin profit is below the tolerance.
    Converged,
    /// The point or step budget is exhausted.
    BudgetExhausted,
}

/// Evaluation cache, index set and surplus records of an adaptive sparse grid.
#[derive(Debug, Clone)]
pub struct SparseGridState {
    dim: usize,
    bounds: Vec<[f64; 2]>,
    index_set: IndexSet,
    records: BTreeMap<MultiIndex, SurplusRecord>,
    eval_cache: HashMap<PointKey, f64>,
    /// Explored points in first-evaluation order.
    points: Vec<Vec<f64>>,
    rules: RuleTable,
    steps: usize,
    last_max_profit: f64,
}

impl SparseGridState {
    /// Evaluates the root and its reduced margin.
    pub fn new(g: &Integrand, bounds: &[[f64; 2]]) -> Result<Self> {
        let dim = bounds.len();
        if dim == 0 {
            return Err(SmolyakError::DimensionMismatch { expected: 1, got: 0 }.into());
        }
        validate_bounds(dim, bounds)?;
        let mut state = Self {
            dim,
            bounds: bounds.to_vec(),
            index_set: IndexSet::new(dim),
            records: BTreeMap::new(),
            eval_cache: HashMap::new(),
            points: Vec::new(),
            rules: RuleTable::default(),
            steps: 0,
            last_max_profit: f64::INFINITY,
        };
        let root = MultiIndex::ones(dim);
        state.evaluate_records(g, std::slice::from_ref(&root), SurplusStatus::Active)?;
        let margin: Vec<MultiIndex> = state.index_set.reduced_margin().into_iter().collect();
        state.evaluate_records(g, &margin, SurplusStatus::Margin)?;
        Ok(state)
    }

    fn tensor_points(&mut self, i: &MultiIndex) -> Vec<Vec<f64>> {
        let max_level = *i.0.iter().max().expect("nonempty index");
        self.rules.ensure(max_level);
        let sizes: Vec<usize> = i.0.iter().map(|&l| cc_points(l)).collect();
        let mut out = Vec::with_capacity(sizes.iter().product());
        for_each_tensor_point(&sizes, |pos| {
            out.push(
                pos.iter()
                    .enumerate()
                    .map(|(n, &p)| map_coordinate(self.rules.nodes(i.0[n])[p], self.bounds[n]))
                    .collect(),
            );
        });
        out
    }

    /// Computes the surplus records of `indices`, evaluating all unseen points of
    /// their tensor grids in one parallel batch.
    fn evaluate_records(&mut self, g: &Integrand, indices: &[MultiIndex], status: SurplusStatus) -> Result<()> {
        let mut pending: Vec<Vec<f64>> = Vec::new();
        let mut pending_keys: HashMap<PointKey, usize> = HashMap::new();
        let mut new_counts = Vec::with_capacity(indices.len());
        for i in indices {
            let mut count = 0;
            for p in self.tensor_points(i) {
                let key = point_key(&p);
                if !self.eval_cache.contains_key(&key) && !pending_keys.contains_key(&key) {
                    pending_keys.insert(key, pending.len());
                    pending.push(p);
                    count += 1;
                }
            }
            new_counts.push(count);
        }
        let values: Vec<f64> = pending
            .par_iter()
            .map(|p| {
                g(p).map_err(|e| Error::Integrand {
                    point: p.clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        for (p, v) in pending.into_iter().zip(values) {
            self.eval_cache.insert(point_key(&p), v);
            self.points.push(p);
        }
        for (i, new_points) in indices.iter().zip(new_counts) {
            let delta_value = self.delta_from_cache(i);
            self.records.insert(
                i.clone(),
                SurplusRecord {
                    index: i.clone(),
                    delta_value,
                    new_points,
                    status,
                },
            );
        }
        Ok(())
    }

    fn delta_from_cache(&mut self, i: &MultiIndex) -> f64 {
        let points = self.tensor_points(i);
        let sizes: Vec<usize> = i.0.iter().map(|&l| cc_points(l)).collect();
        let mut k = 0;
        let mut sum = 0.0;
        let cache = &self.eval_cache;
        let rules = &self.rules;
        for_each_tensor_point(&sizes, |pos| {
            let w: f64 = pos.iter().enumerate().map(|(n, &p)| rules.diff(i.0[n])[p]).product();
            sum += w * cache[&point_key(&points[k])];
            k += 1;
        });
        sum
    }

    fn profit(&self, r: &SurplusRecord, cost_weighted: bool) -> f64 {
        if cost_weighted {
            r.delta_value.abs() / r.new_points.max(1) as f64
        } else {
            r.delta_value.abs()
        }
    }

    /// The margin index with the largest profit; ties go to the lexicographically
    /// smallest index.
    fn best_margin(&self, cost_weighted: bool) -> Option<(MultiIndex, f64)> {
        let mut best: Option<(MultiIndex, f64)> = None;
        for r in self.records.values().filter(|r| r.status == SurplusStatus::Margin) {
            let p = self.profit(r, cost_weighted);
            if best.as_ref().is_none_or(|(_, b)| p > *b) {
                best = Some((r.index.clone(), p));
            }
        }
        best
    }

    /// One adaptive step.
    pub fn step(&mut self, g: &Integrand, opts: &AdaptiveGridOptions) -> Result<StepOutcome> {
        let Some((best, profit)) = self.best_margin(opts.cost_weighted) else {
            return Ok(StepOutcome::Converged);
        };
        self.last_max_profit = profit;
        if profit < opts.tol {
            return Ok(StepOutcome::Converged);
        }
        if self.points.len() >= opts.max_points || self.steps >= opts.max_steps {
            return Ok(StepOutcome::BudgetExhausted);
        }
        self.index_set.insert(best.clone())?;
        self.records.get_mut(&best).expect("margin record").status = SurplusStatus::Active;
        self.steps += 1;
        let fresh: Vec<MultiIndex> = (0..self.dim)
            .map(|n| best.forward(n))
            .filter(|f| self.index_set.is_admissible(f) && !self.records.contains_key(f))
            .collect();
        self.evaluate_records(g, &fresh, SurplusStatus::Margin)?;
        Ok(StepOutcome::Refined)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn index_set(&self) -> &IndexSet {
        &self.index_set
    }

    pub fn records(&self) -> impl Iterator<Item = &SurplusRecord> {
        self.records.values()
    }

    /// Keys of the margin records.
    pub fn margin_indices(&self) -> BTreeSet<MultiIndex> {
        self.records
            .values()
            .filter(|r| r.status == SurplusStatus::Margin)
            .map(|r| r.index.clone())
            .collect()
    }

    /// Sum of the surpluses over the index set, in lexicographic order.
    pub fn expectation(&self) -> f64 {
        self.records
            .values()
            .filter(|r| r.status == SurplusStatus::Active)
            .map(|r| r.delta_value)
            .sum()
    }

    /// Sum of `|surplus|` over the margin.
    pub fn margin_profit_sum(&self) -> f64 {
        self.records
            .values()
            .filter(|r| r.status == SurplusStatus::Margin)
            .map(|r| r.delta_value.abs())
            .sum()
    }

    pub fn points_total(&self) -> usize {
        self.points.len()
    }

    pub fn evaluations(&self) -> usize {
        self.eval_cache.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn value_at(&self, p: &[f64]) -> Option<f64> {
        self.eval_cache.get(&point_key(p)).copied()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_max_profit(&self) -> f64 {
        self.last_max_profit
    }

    /// Grid dump: dimension, index set with surpluses, and all explored points.
    pub fn dump(&self) -> GridDump {
        let active: Vec<&SurplusRecord> = self
            .records
            .values()
            .filter(|r| r.status == SurplusStatus::Active)
            .collect();
        GridDump {
            n: self.dim,
            i: active.iter().map(|r| r.index.0.clone()).collect(),
            points: self.points.clone(),
            surpluses: active.iter().map(|r| r.delta_value).collect(),
        }
    }

    /// Interpolant of scalar samples over the current index set.
    pub fn interpolant(&self) -> SparseInterpolant {
        let samples = self
            .eval_cache
            .iter()
            .map(|(k, &v)| (k.clone(), vec![v]))
            .collect();
        SparseInterpolant::from_parts(self.bounds.clone(), self.index_set.clone(), samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDump {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "I")]
    pub i: Vec<Vec<u32>>,
    pub points: Vec<Vec<f64>>,
    pub surpluses: Vec<f64>,
}

/// Surplus of one tensor difference rule, evaluating `g` through `cache`.
pub fn delta_expectation(
    g: &Integrand,
    i: &MultiIndex,
    bounds: &[[f64; 2]],
    cache: &mut HashMap<Vec<u64>, f64>,
) -> Result<SurplusRecord> {
    validate_bounds(i.dim(), bounds)?;
    if let Some(&l) = i.0.iter().find(|&&l| l < 1) {
        return Err(SmolyakError::InvalidLevel(l).into());
    }
    let mut rules = RuleTable::default();
    rules.ensure(*i.0.iter().max().expect("nonempty index"));
    let sizes: Vec<usize> = i.0.iter().map(|&l| cc_points(l)).collect();
    let mut sum = 0.0;
    let mut new_points = 0;
    let mut failure = None;
    for_each_tensor_point(&sizes, |pos| {
        if failure.is_some() {
            return;
        }
        let p: Vec<f64> = pos
            .iter()
            .enumerate()
            .map(|(n, &k)| map_coordinate(rules.nodes(i.0[n])[k], bounds[n]))
            .collect();
        let key = point_key(&p);
        let v = match cache.get(&key) {
            Some(&v) => v,
            None => match g(&p) {
                Ok(v) => {
                    cache.insert(key, v);
                    new_points += 1;
                    v
                }
                Err(e) => {
                    failure = Some(Error::Integrand {
                        point: p.clone(),
                        source: Box::new(e),
                    });
                    return;
                }
            },
        };
        let w: f64 = pos.iter().enumerate().map(|(n, &k)| rules.diff(i.0[n])[k]).product();
        sum += w * v;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(SurplusRecord {
        index: i.clone(),
        delta_value: sum,
        new_points,
        status: SurplusStatus::Active,
    })
}

#[derive(Debug, Clone)]
pub struct AdaptiveExpectation {
    pub value: f64,
    pub index_set: IndexSet,
    pub points_total: usize,
    pub last_max_profit: f64,
    /// Set when the point or step budget ran out before convergence.
    pub flagged: bool,
    pub state: SparseGridState,
}

/// Dimension-adaptive estimate of `E[g]` under the uniform density on `bounds`.
pub fn adaptive_expectation(g: &Integrand, bounds: &[[f64; 2]], opts: &AdaptiveGridOptions) -> Result<AdaptiveExpectation> {
    if !(opts.tol > 0.0) {
        return Err(SmolyakError::InvalidTolerance(opts.tol).into());
    }
    let mut state = SparseGridState::new(g, bounds)?;
    let flagged = loop {
        match state.step(g, opts)? {
            StepOutcome::Refined => {}
            StepOutcome::Converged => break false,
            StepOutcome::BudgetExhausted => break true,
        }
    };
    Ok(AdaptiveExpectation {
        value: state.expectation(),
        index_set: state.index_set.clone(),
        points_total: state.points_total(),
        last_max_profit: state.last_max_profit,
        flagged,
        state,
    })
}

fn lagrange_basis(nodes: &[f64], t: f64, out: &mut Vec<f64>) {
    out.clear();
    for (j, &xj) in nodes.iter().enumerate() {
        let mut l = 1.0;
        for (k, &xk) in nodes.iter().enumerate() {
            if k != j {
                l *= (t - xk) / (xj - xk);
            }
        }
        out.push(l);
    }
}

/// Sparse interpolant of vector-valued samples, evaluated by the combination formula
/// `sum_{i in I} c_i (tensor interpolant of level i)`.
#[derive(Debug, Clone)]
pub struct SparseInterpolant {
    bounds: Vec<[f64; 2]>,
    terms: Vec<(MultiIndex, f64)>,
    samples: HashMap<PointKey, Vec<f64>>,
    rules: RuleTable,
}

impl SparseInterpolant {
    fn from_parts(bounds: Vec<[f64; 2]>, index_set: IndexSet, samples: HashMap<PointKey, Vec<f64>>) -> Self {
        let dim = index_set.dim();
        let mut terms = Vec::new();
        for i in index_set.iter() {
            let mut c = 0.0;
            for mask in 0u32..1 << dim {
                let shifted = MultiIndex(
                    i.0.iter()
                        .enumerate()
                        .map(|(n, &l)| l + (mask >> n & 1))
                        .collect(),
                );
                if index_set.contains(&shifted) {
                    c += if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            if c != 0.0 {
                terms.push((i.clone(), c));
            }
        }
        let max_level = index_set.iter().flat_map(|i| i.0.iter().copied()).max().unwrap_or(1);
        let mut rules = RuleTable::default();
        rules.ensure(max_level);
        Self {
            bounds,
            terms,
            samples,
            rules,
        }
    }

    /// Samples `f` on every node of `index_set`.
    pub fn build(
        f: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
        bounds: &[[f64; 2]],
        index_set: &IndexSet,
    ) -> Result<Self> {
        validate_bounds(index_set.dim(), bounds)?;
        if !index_set.is_downward_closed() {
            return Err(SmolyakError::NotDownwardClosed("interpolation set".into()).into());
        }
        let max_level = index_set.iter().flat_map(|i| i.0.iter().copied()).max().unwrap_or(1);
        let mut rules = RuleTable::default();
        rules.ensure(max_level);
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut seen = BTreeSet::new();
        for i in index_set.iter() {
            let sizes: Vec<usize> = i.0.iter().map(|&l| cc_points(l)).collect();
            for_each_tensor_point(&sizes, |pos| {
                let p: Vec<f64> = pos
                    .iter()
                    .enumerate()
                    .map(|(n, &k)| map_coordinate(rules.nodes(i.0[n])[k], bounds[n]))
                    .collect();
                if seen.insert(point_key(&p)) {
                    points.push(p);
                }
            });
        }
        let values: Vec<Vec<f64>> = points
            .par_iter()
            .map(|p| {
                f(p).map_err(|e| Error::Integrand {
                    point: p.clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        let samples = points.iter().map(|p| point_key(p)).zip(values).collect();
        Ok(Self::from_parts(bounds.to_vec(), index_set.clone(), samples))
    }

    pub fn eval(&self, y: &[f64]) -> Result<Vec<f64>> {
        let dim = self.bounds.len();
        if y.len() != dim {
            return Err(SmolyakError::DimensionMismatch { expected: dim, got: y.len() }.into());
        }
        if y.iter().zip(&self.bounds).any(|(v, b)| !(*v >= b[0] && *v <= b[1])) {
            return Err(SmolyakError::OutOfBounds { point: y.to_vec() }.into());
        }
        let t: Vec<f64> = y
            .iter()
            .zip(&self.bounds)
            .map(|(v, b)| 2.0 * (v - b[0]) / (b[1] - b[0]) - 1.0)
            .collect();
        let mut out: Vec<f64> = Vec::new();
        let mut basis: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for (i, c) in &self.terms {
            for n in 0..dim {
                lagrange_basis(self.rules.nodes(i.0[n]), t[n], &mut basis[n]);
            }
            let sizes: Vec<usize> = i.0.iter().map(|&l| cc_points(l)).collect();
            for_each_tensor_point(&sizes, |pos| {
                let w: f64 = pos.iter().enumerate().map(|(n, &k)| basis[n][k]).product();
                let p: Vec<f64> = pos
                    .iter()
                    .enumerate()
                    .map(|(n, &k)| map_coordinate(self.rules.nodes(i.0[n])[k], self.bounds[n]))
                    .collect();
                let v = &self.samples[&point_key(&p)];
                if out.is_empty() {
                    out = vec![0.0; v.len()];
                }
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += c * w * vi;
                }
            });
        }
        Ok(out)
    }
}
