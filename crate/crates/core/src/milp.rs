//! Branch-and-bound over the simplex relaxation, with an incumbent trace,
//! a distinct-solution pool, and an optional file-based external adapter.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LpError, LpModel, LpStatus};
use crate::mip::{MipError, MipInstance, Sense, Solution, SolutionSource};
use crate::util::{Clock, ClockMode};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("unbounded relaxation at the root; the MIP has no finite optimum")]
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchRule {
    MostFractional,
    PseudoCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOrder {
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Seconds on the configured clock.
    pub time_limit: f64,
    pub node_limit: usize,
    pub integrality_tol: f64,
    pub feas_tol: f64,
    pub branch_rule: BranchRule,
    pub node_order: NodeOrder,
    pub rng_seed: u64,
    /// Number of distinct solutions retained; values above one switch the
    /// search into pool mode, which prunes against the worst pooled solution.
    pub pool_capacity: usize,
    pub clock: ClockMode,
    /// Relative random jitter applied to branching scores; zero keeps the
    /// lowest-index tie rule.
    pub branch_jitter: f64,
    /// Row-activity rounding of fractional node relaxations.
    pub rounding: bool,
    /// Run an LP-guided dive at the root and then every this many nodes;
    /// zero disables diving.
    pub dive_every: usize,
    /// Branch on fractional binaries before general integers.
    pub binary_first: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            time_limit: 10.0,
            node_limit: 1_000_000,
            integrality_tol: 1e-6,
            feas_tol: 1e-6,
            branch_rule: BranchRule::MostFractional,
            node_order: NodeOrder::BestBound,
            rng_seed: 0,
            pool_capacity: 1,
            clock: ClockMode::Work,
            branch_jitter: 0.0,
            rounding: true,
            dive_every: 100,
            binary_first: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.to_string()));
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be positive");
        }
        if self.node_limit == 0 {
            return bad("node_limit must be positive");
        }
        if self.pool_capacity == 0 {
            return bad("pool_capacity must be positive");
        }
        for (name, t) in [("integrality_tol", self.integrality_tol), ("feas_tol", self.feas_tol)] {
            if !(t > 0.0 && t < 1e-2) {
                return Err(SolveError::Config(format!("{name} must lie in (0, 1e-2), got {t}")));
            }
        }
        if !(self.branch_jitter >= 0.0) {
            return bad("branch_jitter must be non-negative");
        }
        Ok(())
    }

    /// Deterministic mode: node-limited, no time limit in practice.
    pub fn with_node_limit(nodes: usize) -> Self {
        SolverConfig { node_limit: nodes, time_limit: f64::MAX, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// `(seconds, objective)` at each strict improvement.
    pub incumbents: Vec<(f64, f64)>,
    pub best_solution: Option<Solution>,
    pub best_bound: f64,
    pub nodes: usize,
    /// Distinct solutions found, ascending objective; at most `pool_capacity`
    /// in pool mode, otherwise every improving incumbent.
    pub pool: Vec<Solution>,
    pub elapsed: f64,
}

impl SolveResult {
    pub fn best_objective(&self) -> Option<f64> {
        self.best_solution.as_ref().map(|s| s.objective)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Node {
    id: usize,
    bound: f64,
    depth: usize,
    /// Bound changes relative to the root: (var, lb, ub).
    changes: Vec<(usize, f64, f64)>,
    /// Branching that created this node: (var, down branch, distance moved).
    branched: Option<(usize, bool, f64)>,
}

struct HeapEntry(Node);

impl PartialEq for HeapEntry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapEntry {
    // max-heap: smaller bound first, then smaller id
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.bound.total_cmp(&self.0.bound).then_with(|| o.0.id.cmp(&self.0.id))
    }
}

enum Frontier {
    Best(BinaryHeap<HeapEntry>),
    Depth(Vec<Node>),
}

impl Frontier {
    fn push(&mut self, n: Node) {
        match self {
            Frontier::Best(h) => h.push(HeapEntry(n)),
            Frontier::Depth(s) => s.push(n),
        }
    }
    fn pop(&mut self) -> Option<Node> {
        match self {
            Frontier::Best(h) => h.pop().map(|e| e.0),
            Frontier::Depth(s) => s.pop(),
        }
    }
    fn min_bound(&self) -> f64 {
        match self {
            Frontier::Best(h) => h.peek().map_or(f64::INFINITY, |e| e.0.bound),
            Frontier::Depth(s) => s.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min),
        }
    }
    fn is_empty(&self) -> bool {
        match self {
            Frontier::Best(h) => h.is_empty(),
            Frontier::Depth(s) => s.is_empty(),
        }
    }
}

/// Distinct solutions keyed by their rounded integer subvector.
struct Pool {
    capacity: usize,
    keep_all_improving: bool,
    items: Vec<(Vec<i64>, Solution)>,
    keys: HashSet<Vec<i64>>,
}

impl Pool {
    fn new(capacity: usize) -> Self {
        Pool { capacity, keep_all_improving: capacity <= 1, items: Vec::new(), keys: HashSet::new() }
    }

    fn threshold(&self) -> f64 {
        if !self.keep_all_improving && self.items.len() >= self.capacity {
            self.items.last().map_or(f64::INFINITY, |s| s.1.objective)
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, key: Vec<i64>, sol: Solution) {
        if self.keys.contains(&key) {
            return;
        }
        if !self.keep_all_improving && self.items.len() >= self.capacity && sol.objective >= self.threshold() {
            return;
        }
        let pos = self
            .items
            .partition_point(|(k, s)| s.objective < sol.objective || (s.objective == sol.objective && *k < key));
        self.keys.insert(key.clone());
        self.items.insert(pos, (key, sol));
        if !self.keep_all_improving && self.items.len() > self.capacity {
            let (k, _) = self.items.pop().expect("non-empty");
            self.keys.remove(&k);
        }
    }
}

pub(crate) fn integer_key(inst: &MipInstance, x: &[f64]) -> Vec<i64> {
    inst.integer_indices().into_iter().map(|j| x[j].round() as i64).collect()
}

struct Locks {
    /// For each variable: rows it appears in, with coefficient.
    col_rows: Vec<Vec<(usize, f64)>>,
}

/// Solves `inst` to optimality or until a limit trips.
pub fn solve_mip(inst: &MipInstance, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    solve_mip_with_clock(inst, cfg, Clock::new(cfg.clock))
}

/// As [`solve_mip`], continuing an already running clock (e.g. one that has
/// been charged for model inference).
pub fn solve_mip_with_clock(inst: &MipInstance, cfg: &SolverConfig, mut clock: Clock) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    inst.validate()?;
    let n = inst.num_vars();
    let int_idx = inst.integer_indices();
    let model = LpModel::from_instance(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut locks = Locks { col_rows: vec![Vec::new(); n] };
    for (i, r) in inst.rows.iter().enumerate() {
        for &(j, a) in &r.terms {
            locks.col_rows[j].push((i, a));
        }
    }
    let mut pseudo = PseudoCosts::new(n);
    let safe = safe_directions(inst, &locks);

    let mut pool = Pool::new(cfg.pool_capacity);
    let pool_mode = cfg.pool_capacity > 1;
    let mut incumbents: Vec<(f64, f64)> = Vec::new();
    let mut best: Option<Solution> = None;
    let mut frontier = match cfg.node_order {
        NodeOrder::BestBound => Frontier::Best(BinaryHeap::new()),
        NodeOrder::DepthFirst => Frontier::Depth(Vec::new()),
    };
    frontier.push(Node { id: 0, bound: f64::NEG_INFINITY, depth: 0, changes: Vec::new(), branched: None });
    let mut next_id = 1;
    let mut nodes = 0usize;
    let mut limit_hit = false;
    let mut lower = inst.lower.clone();
    let mut upper = inst.upper.clone();

    let cutoff = |best: &Option<Solution>, pool: &Pool| -> f64 {
        if pool_mode {
            pool.threshold()
        } else {
            best.as_ref().map_or(f64::INFINITY, |s| s.objective - 1e-6 * s.objective.abs().max(1.0))
        }
    };

    let record = |x: Vec<f64>,
                      clock: &Clock,
                      best: &mut Option<Solution>,
                      pool: &mut Pool,
                      incumbents: &mut Vec<(f64, f64)>|
     -> Result<(), SolveError> {
        let sol = Solution::evaluate(inst, x, cfg.feas_tol, SolutionSource::Solver)?;
        if !sol.feasible {
            return Ok(());
        }
        let improves = best.as_ref().is_none_or(|b| sol.objective < b.objective);
        if improves {
            incumbents.push((clock.elapsed(), sol.objective));
            *best = Some(sol.clone());
        }
        if improves || pool_mode {
            pool.offer(integer_key(inst, &sol.values), sol);
        }
        Ok(())
    };

    while let Some(node) = frontier.pop() {
        if nodes >= cfg.node_limit || clock.elapsed() >= cfg.time_limit {
            frontier.push(node);
            limit_hit = true;
            break;
        }
        if node.bound >= cutoff(&best, &pool) {
            continue;
        }
        nodes += 1;
        clock.charge(n as f64 * (1 + node.changes.len()) as f64);
        lower.copy_from_slice(&inst.lower);
        upper.copy_from_slice(&inst.upper);
        for &(j, l, u) in &node.changes {
            lower[j] = l;
            upper[j] = u;
        }
        let lp = model.solve(&lower, &upper, &mut clock)?;
        match lp.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node.id == 0 {
                    return Err(SolveError::Unbounded);
                }
                // A bounded-integer child of a bounded root cannot be unbounded
                // unless the continuous part is; treat as a numerical prune.
                continue;
            }
            LpStatus::Optimal => {}
        }
        if lp.objective >= cutoff(&best, &pool) {
            continue;
        }
        if let (Some((j, down, dist)), true) = (node.branched, node.bound.is_finite()) {
            pseudo.observe(j, down, dist, lp.objective - node.bound);
        }

        let fractional: Vec<(usize, f64)> = int_idx
            .iter()
            .map(|&j| (j, lp.x[j]))
            .filter(|&(_, v)| (v - v.round()).abs() > cfg.integrality_tol)
            .collect();

        if fractional.is_empty() {
            let mut x = lp.x.clone();
            for &j in &int_idx {
                x[j] = x[j].round();
            }
            record(x, &clock, &mut best, &mut pool, &mut incumbents)?;
            if pool_mode {
                // keep enumerating integer points below the pool threshold
                if let Some(&j) = int_idx.iter().find(|&&j| upper[j] > lower[j]) {
                    let v = lp.x[j].round().clamp(lower[j], upper[j]);
                    let (a, b) = if v < upper[j] { (v, v + 1.0) } else { (v - 1.0, v) };
                    for (l, u) in [(lower[j], a), (b, upper[j])] {
                        let mut changes = node.changes.clone();
                        changes.push((j, l, u));
                        frontier.push(Node { id: next_id, bound: lp.objective, depth: node.depth + 1, changes, branched: None });
                        next_id += 1;
                    }
                }
            }
            continue;
        }

        if cfg.rounding {
            if let Some(x) = round_by_activity(inst, &locks, &lp.x, &fractional, &lower, &upper, cfg.feas_tol) {
                clock.charge(inst.num_nonzeros() as f64);
                record(x, &clock, &mut best, &mut pool, &mut incumbents)?;
                if lp.objective >= cutoff(&best, &pool) {
                    continue;
                }
            }
        }

        if cfg.dive_every > 0 && (nodes - 1) % cfg.dive_every == 0 {
            let cut = cutoff(&best, &pool);
            if let Some(x) = dive(&model, &int_idx, &safe, &lp.x, &lower, &upper, cut, cfg, &mut clock)? {
                record(x, &clock, &mut best, &mut pool, &mut incumbents)?;
                if lp.objective >= cutoff(&best, &pool) {
                    continue;
                }
            }
        }

        let candidates: Vec<(usize, f64)> = if cfg.binary_first {
            let bins: Vec<(usize, f64)> =
                fractional.iter().copied().filter(|&(j, _)| inst.kind[j] == crate::mip::VarKind::Binary).collect();
            if bins.is_empty() {
                fractional
            } else {
                bins
            }
        } else {
            fractional
        };
        let (j, v) = choose_branch(cfg, &candidates, &pseudo, &mut rng);
        let down = (lower[j], v.floor());
        let up = (v.ceil(), upper[j]);
        // closer side first: lower id and popped first in depth-first order
        let f = v - v.floor();
        let down_child = (down, true, f);
        let up_child = (up, false, 1.0 - f);
        // far child pushed first
        let ordered = if f <= 0.5 { [up_child, down_child] } else { [down_child, up_child] };
        let mut children = Vec::with_capacity(2);
        for ((l, u), is_down, dist) in ordered {
            let mut changes = node.changes.clone();
            changes.push((j, l, u));
            children.push((changes, (j, is_down, dist)));
        }
        // best-bound pops lower ids first, depth-first pops the last pushed
        let ids: Vec<usize> = match frontier {
            Frontier::Best(_) => vec![next_id + 1, next_id],
            Frontier::Depth(_) => vec![next_id, next_id + 1],
        };
        next_id += 2;
        for ((changes, branched), id) in children.into_iter().zip(ids) {
            frontier.push(Node { id, bound: lp.objective, depth: node.depth + 1, changes, branched: Some(branched) });
        }
    }

    let open_bound = frontier.min_bound();
    let inc_obj = best.as_ref().map_or(f64::INFINITY, |s| s.objective);
    let (status, best_bound) = if limit_hit && !frontier.is_empty() {
        (SolveStatus::TimeLimit, open_bound.min(inc_obj))
    } else if best.is_some() {
        (SolveStatus::Optimal, inc_obj)
    } else {
        (SolveStatus::Infeasible, f64::INFINITY)
    };
    let pool: Vec<Solution> = pool.items.into_iter().map(|(_, s)| s).collect();
    Ok(SolveResult { status, incumbents, best_solution: best, best_bound, nodes, pool, elapsed: clock.elapsed() })
}

/// Rounding directions that cannot violate any row: `(up_safe, down_safe)`.
fn safe_directions(inst: &MipInstance, locks: &Locks) -> Vec<(bool, bool)> {
    locks
        .col_rows
        .iter()
        .map(|rows| {
            let (mut up, mut down) = (true, true);
            for &(i, a) in rows {
                match (inst.rows[i].sense, a > 0.0) {
                    (Sense::EQ, _) => (up, down) = (false, false),
                    (Sense::LE, true) | (Sense::GE, false) => up = false,
                    (Sense::LE, false) | (Sense::GE, true) => down = false,
                }
            }
            (up, down)
        })
        .collect()
}

/// LP-guided dive. Each round tightens the bounds of the fractional integer
/// variables closest to an integer (a quarter of them, at least one) towards
/// their nearest integer and re-solves. A failed round is retried with
/// row-safe directions, then with a single variable in either direction.
/// Stops when the relaxation is integral, or gives up when every retry is
/// infeasible or no better than `cutoff`.
#[allow(clippy::too_many_arguments)]
fn dive(
    model: &LpModel,
    int_idx: &[usize],
    safe: &[(bool, bool)],
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    cutoff: f64,
    cfg: &SolverConfig,
    clock: &mut Clock,
) -> Result<Option<Vec<f64>>, SolveError> {
    let mut lo = lower.to_vec();
    let mut up = upper.to_vec();
    let mut x = x.to_vec();
    for _ in 0..=2 * int_idx.len() {
        if clock.elapsed() >= cfg.time_limit {
            return Ok(None);
        }
        let mut frac: Vec<(f64, usize)> = int_idx
            .iter()
            .map(|&j| ((x[j] - x[j].round()).abs(), j))
            .filter(|&(d, _)| d > cfg.integrality_tol)
            .collect();
        if frac.is_empty() {
            for &j in int_idx {
                x[j] = x[j].round();
            }
            return Ok(Some(x));
        }
        frac.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let batch: Vec<usize> = frac[..frac.len().div_ceil(4)].iter().map(|e| e.1).collect();
        let nearest_up = |j: usize| x[j] - x[j].floor() >= 0.5;
        let safe_up = |j: usize| match safe[j] {
            (true, _) => true,
            (false, true) => false,
            (false, false) => nearest_up(j),
        };
        let first = batch[0];
        let attempts: Vec<Vec<(usize, bool)>> = vec![
            batch.iter().map(|&j| (j, nearest_up(j))).collect(),
            batch.iter().map(|&j| (j, safe_up(j))).collect(),
            vec![(first, nearest_up(first))],
            vec![(first, !nearest_up(first))],
        ];
        let mut next = None;
        for att in attempts {
            let (mut l2, mut u2) = (lo.clone(), up.clone());
            for &(j, go_up) in &att {
                if go_up {
                    l2[j] = x[j].ceil().min(u2[j]);
                } else {
                    u2[j] = x[j].floor().max(l2[j]);
                }
            }
            let lp = model.solve(&l2, &u2, clock)?;
            if lp.status == LpStatus::Optimal && lp.objective < cutoff {
                next = Some((l2, u2, lp.x));
                break;
            }
        }
        match next {
            Some((l2, u2, x2)) => {
                lo = l2;
                up = u2;
                x = x2;
            }
            None => return Ok(None),
        }
    }
    Ok(None)
}

fn choose_branch(cfg: &SolverConfig, fractional: &[(usize, f64)], pseudo: &PseudoCosts, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let mut best: Option<(f64, usize, f64)> = None;
    for &(j, v) in fractional {
        let f = v - v.floor();
        let mut score = match cfg.branch_rule {
            BranchRule::MostFractional => f.min(1.0 - f),
            BranchRule::PseudoCost => pseudo.score(j, f),
        };
        if cfg.branch_jitter > 0.0 {
            score *= 1.0 + cfg.branch_jitter * rng.random::<f64>();
        }
        // strict comparison keeps the lowest index on ties
        if best.is_none_or(|(s, _, _)| score > s) {
            best = Some((score, j, v));
        }
    }
    let (_, j, v) = best.expect("fractional set is non-empty");
    (j, v)
}

struct PseudoCosts {
    down: Vec<(f64, usize)>,
    up: Vec<(f64, usize)>,
}

impl PseudoCosts {
    fn new(n: usize) -> Self {
        PseudoCosts { down: vec![(0.0, 0); n], up: vec![(0.0, 0); n] }
    }

    /// Records the objective gain per unit of distance for one branch.
    fn observe(&mut self, j: usize, down: bool, dist: f64, gain: f64) {
        let slot = if down { &mut self.down[j] } else { &mut self.up[j] };
        slot.0 += gain.max(0.0) / dist.max(1e-6);
        slot.1 += 1;
    }

    fn score(&self, j: usize, f: f64) -> f64 {
        let avg = |s: (f64, usize)| if s.1 == 0 { 1.0 } else { s.0 / s.1 as f64 };
        let d = avg(self.down[j]) * f;
        let u = avg(self.up[j]) * (1.0 - f);
        d.max(1e-6) * u.max(1e-6)
    }
}

/// Rounds fractional integer values one at a time in a direction that keeps
/// every row satisfied given the current activities. Multiple passes let a
/// variable that was blocked become roundable after others moved.
fn round_by_activity(
    inst: &MipInstance,
    locks: &Locks,
    x: &[f64],
    fractional: &[(usize, f64)],
    lower: &[f64],
    upper: &[f64],
    tol: f64,
) -> Option<Vec<f64>> {
    let mut x = x.to_vec();
    let mut act: Vec<f64> = inst.rows.iter().map(|r| r.activity(&x)).collect();
    let mut pending: Vec<usize> = fractional.iter().map(|&(j, _)| j).collect();
    let fits = |act: &[f64], j: usize, delta: f64| -> bool {
        locks.col_rows[j].iter().all(|&(i, a)| {
            let row = &inst.rows[i];
            let nv = act[i] + a * delta;
            match row.sense {
                Sense::LE => nv <= row.rhs + tol || a * delta <= 0.0,
                Sense::GE => nv >= row.rhs - tol || a * delta >= 0.0,
                Sense::EQ => (nv - row.rhs).abs() <= tol,
            }
        })
    };
    loop {
        let before = pending.len();
        pending.retain(|&j| {
            let v = x[j];
            let (fl, ce) = (v.floor(), v.ceil());
            // prefer the nearer integer when both are admissible
            let order = if v - fl <= ce - v { [fl, ce] } else { [ce, fl] };
            for t in order {
                if t < lower[j] || t > upper[j] {
                    continue;
                }
                let delta = t - v;
                if fits(&act, j, delta) {
                    for &(i, a) in &locks.col_rows[j] {
                        act[i] += a * delta;
                    }
                    x[j] = t;
                    return false;
                }
            }
            true
        });
        if pending.is_empty() {
            break;
        }
        if pending.len() == before {
            return None;
        }
    }
    for j in inst.integer_indices() {
        x[j] = x[j].round();
    }
    Some(x)
}

/// Up to `u_p` distinct feasible solutions with the smallest objectives.
///
/// Runs the search in pool mode; when a limit stops it before the pool is
/// full, restarts with jittered branching (derived seeds) merge in further
/// distinct solutions until `u_p` is reached or `restarts` are used up.
pub fn collect_solution_pool(
    inst: &MipInstance,
    u_p: usize,
    cfg: &SolverConfig,
    restarts: usize,
) -> Result<(Vec<Solution>, SolveResult), SolveError> {
    if u_p == 0 {
        return Err(SolveError::Config("u_p must be at least 1".into()));
    }
    let run_cfg = SolverConfig { pool_capacity: u_p.max(2), ..cfg.clone() };
    let first = solve_mip(inst, &run_cfg)?;
    let mut merged = Pool::new(u_p.max(2));
    for s in &first.pool {
        merged.offer(integer_key(inst, &s.values), s.clone());
    }
    if first.status == SolveStatus::TimeLimit {
        for r in 0..restarts {
            if merged.items.len() >= u_p {
                break;
            }
            let cfg_r = SolverConfig {
                rng_seed: crate::util::derive_seed(cfg.rng_seed, "pool-restart", r as u64),
                branch_jitter: 0.5,
                node_order: NodeOrder::DepthFirst,
                ..run_cfg.clone()
            };
            let again = solve_mip(inst, &cfg_r)?;
            for s in again.pool {
                merged.offer(integer_key(inst, &s.values), s);
            }
        }
    }
    let mut sols: Vec<Solution> = merged.items.into_iter().map(|(_, s)| s).collect();
    sols.truncate(u_p);
    Ok((sols, first))
}

// ---------------------------------------------------------------------------
// LP text format

fn lp_names(inst: &MipInstance) -> Vec<String> {
    let valid = |s: &str| {
        !s.is_empty()
            && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c))
            && !s.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.')
            && !matches!(s.to_ascii_lowercase().as_str(), "free" | "inf" | "infinity" | "end")
    };
    let unique = inst.var_names.iter().collect::<HashSet<_>>().len() == inst.num_vars();
    if unique && inst.var_names.iter().all(|s| valid(s)) {
        inst.var_names.clone()
    } else {
        (0..inst.num_vars()).map(|j| format!("x{j}")).collect()
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt_terms(terms: impl Iterator<Item = (f64, String)>) -> String {
    let mut s = String::new();
    for (k, (a, name)) in terms.enumerate() {
        if k == 0 {
            s.push_str(&format!("{} {}", fmt_num(a), name));
        } else if a < 0.0 {
            s.push_str(&format!(" - {} {}", fmt_num(-a), name));
        } else {
            s.push_str(&format!(" + {} {}", fmt_num(a), name));
        }
    }
    s
}

/// CPLEX-style LP text for `inst`.
pub fn to_lp_string(inst: &MipInstance) -> String {
    let names = lp_names(inst);
    let mut out = format!("\\ {}\nMinimize\n", inst.name);
    let obj: Vec<(f64, String)> =
        inst.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (c, names[j].clone())).collect();
    if obj.is_empty() && inst.num_vars() > 0 {
        out.push_str(&format!(" obj: 0 {}\n", names[0]));
    } else {
        out.push_str(&format!(" obj: {}\n", fmt_terms(obj.into_iter())));
    }
    out.push_str("Subject To\n");
    for (i, row) in inst.rows.iter().enumerate() {
        let op = match row.sense {
            Sense::LE => "<=",
            Sense::GE => ">=",
            Sense::EQ => "=",
        };
        let lhs = if row.terms.is_empty() {
            format!("0 {}", names.first().cloned().unwrap_or_else(|| "x0".into()))
        } else {
            fmt_terms(row.terms.iter().map(|&(j, a)| (a, names[j].clone())))
        };
        out.push_str(&format!(" c{i}: {lhs} {op} {}\n", fmt_num(row.rhs)));
    }
    out.push_str("Bounds\n");
    for j in 0..inst.num_vars() {
        out.push_str(&format!(" {} <= {} <= {}\n", fmt_num(inst.lower[j]), names[j], fmt_num(inst.upper[j])));
    }
    for (section, kind) in [("Generals", crate::mip::VarKind::GeneralInteger), ("Binaries", crate::mip::VarKind::Binary)] {
        let members: Vec<&str> =
            (0..inst.num_vars()).filter(|&j| inst.kind[j] == kind).map(|j| names[j].as_str()).collect();
        if !members.is_empty() {
            out.push_str(section);
            out.push('\n');
            for chunk in members.chunks(8) {
                out.push_str(&format!(" {}\n", chunk.join(" ")));
            }
        }
    }
    out.push_str("End\n");
    out
}

pub fn export_lp_file(inst: &MipInstance, path: &std::path::Path) -> Result<(), MipError> {
    crate::util::write_atomic(path, to_lp_string(inst).as_bytes()).map_err(|e| MipError::io(path, e))
}

fn parse_num(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "+inf" | "inf" | "+infinity" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

/// Parses the subset of the LP format written by [`to_lp_string`].
pub fn parse_lp_str(text: &str) -> Result<MipInstance, MipError> {
    use crate::mip::VarKind;
    let perr = |line: usize, msg: String| MipError::Parse { line, column: 1, msg };
    #[derive(PartialEq)]
    enum Sec {
        None,
        Obj,
        Rows,
        Bounds,
        Gen,
        Bin,
    }
    let mut sec = Sec::None;
    let mut name = String::from("lp");
    let mut inst = MipInstance::new("", "lp-import", 0);
    let mut index = std::collections::HashMap::new();
    let mut obj_terms: Vec<(String, f64)> = Vec::new();
    let mut rows: Vec<(Vec<(String, f64)>, Sense, f64)> = Vec::new();
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    let mut kinds: Vec<(String, VarKind)> = Vec::new();

    let parse_terms = |s: &str, line: usize| -> Result<Vec<(String, f64)>, MipError> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let mut out = Vec::new();
        let mut k = 0;
        let mut sign = 1.0;
        while k < toks.len() {
            match toks[k] {
                "+" => {
                    sign = 1.0;
                    k += 1;
                }
                "-" => {
                    sign = -1.0;
                    k += 1;
                }
                t => {
                    let coef = parse_num(t).ok_or_else(|| perr(line, format!("expected coefficient, got {t:?}")))?;
                    let var = toks.get(k + 1).ok_or_else(|| perr(line, "dangling coefficient".into()))?;
                    out.push((var.to_string(), sign * coef));
                    sign = 1.0;
                    k += 2;
                }
            }
        }
        Ok(out)
    };

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('\\') {
            if sec == Sec::None {
                name = rest.trim().to_string();
            }
            continue;
        }
        match t.to_ascii_lowercase().as_str() {
            "minimize" => {
                sec = Sec::Obj;
                continue;
            }
            "subject to" => {
                sec = Sec::Rows;
                continue;
            }
            "bounds" => {
                sec = Sec::Bounds;
                continue;
            }
            "generals" => {
                sec = Sec::Gen;
                continue;
            }
            "binaries" => {
                sec = Sec::Bin;
                continue;
            }
            "end" => break,
            _ => {}
        }
        match sec {
            Sec::None => return Err(perr(line, format!("unexpected text before a section: {t:?}"))),
            Sec::Obj => {
                let body = t.split_once(':').map_or(t, |(_, b)| b);
                obj_terms.extend(parse_terms(body, line)?);
            }
            Sec::Rows => {
                let body = t.split_once(':').map_or(t, |(_, b)| b);
                let (op, sense) = if body.contains("<=") {
                    ("<=", Sense::LE)
                } else if body.contains(">=") {
                    (">=", Sense::GE)
                } else if body.contains('=') {
                    ("=", Sense::EQ)
                } else {
                    return Err(perr(line, "constraint without comparison operator".into()));
                };
                let (lhs, rhs) = body.split_once(op).expect("operator present");
                let rhs = parse_num(rhs.trim()).ok_or_else(|| perr(line, format!("bad rhs {:?}", rhs.trim())))?;
                rows.push((parse_terms(lhs, line)?, sense, rhs));
            }
            Sec::Bounds => {
                let toks: Vec<&str> = t.split_whitespace().collect();
                match toks.as_slice() {
                    [l, "<=", v, "<=", u] => {
                        let l = parse_num(l).ok_or_else(|| perr(line, "bad lower bound".into()))?;
                        let u = parse_num(u).ok_or_else(|| perr(line, "bad upper bound".into()))?;
                        bounds.push((v.to_string(), l, u));
                    }
                    [v, f] if f.eq_ignore_ascii_case("free") => {
                        bounds.push((v.to_string(), f64::NEG_INFINITY, f64::INFINITY))
                    }
                    _ => return Err(perr(line, format!("unsupported bound line {t:?}"))),
                }
            }
            Sec::Gen | Sec::Bin => {
                let kind = if sec == Sec::Gen { VarKind::GeneralInteger } else { VarKind::Binary };
                kinds.extend(t.split_whitespace().map(|v| (v.to_string(), kind)));
            }
        }
    }

    // Variable order: first appearance in bounds, then objective, then rows.
    let mut ensure = |inst: &mut MipInstance, v: &str| -> usize {
        *index.entry(v.to_string()).or_insert_with(|| inst.add_var(v, VarKind::Continuous, 0.0, f64::INFINITY, 0.0))
    };
    for (v, l, u) in &bounds {
        let j = ensure(&mut inst, v);
        inst.lower[j] = *l;
        inst.upper[j] = *u;
    }
    let mut obj = Vec::new();
    for (v, c) in &obj_terms {
        obj.push((ensure(&mut inst, v), *c));
    }
    let mut built_rows = Vec::new();
    for (terms, sense, rhs) in &rows {
        let t: Vec<(usize, f64)> =
            terms.iter().filter(|(_, a)| *a != 0.0).map(|(v, a)| (ensure(&mut inst, v), *a)).collect();
        built_rows.push((t, *sense, *rhs));
    }
    for (v, kind) in &kinds {
        let j = ensure(&mut inst, v);
        inst.kind[j] = *kind;
    }
    for (j, c) in obj {
        inst.objective[j] += c;
    }
    for (t, s, r) in built_rows {
        inst.add_row(t, s, r);
    }
    inst.name = name;
    inst.validate()?;
    Ok(inst)
}

pub fn import_lp_file(path: &std::path::Path) -> Result<MipInstance, MipError> {
    let text = std::fs::read_to_string(path).map_err(|e| MipError::io(path, e))?;
    parse_lp_str(&text)
}

// ---------------------------------------------------------------------------
// External solver adapter

/// Command used to solve an exported LP file. `{lp}` and `{sol}` in `args`
/// are replaced by the LP path and the expected solution-file path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSolver {
    pub command: String,
    pub args: Vec<String>,
}

/// Parses `name value` lines; unknown names and lines starting with `#` are
/// skipped. Missing variables default to zero.
pub fn parse_solution_lines(inst: &MipInstance, text: &str) -> Vec<f64> {
    let names = lp_names(inst);
    let index: std::collections::HashMap<&str, usize> = names.iter().enumerate().map(|(j, s)| (s.as_str(), j)).collect();
    let mut x = vec![0.0; inst.num_vars()];
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        if let (Some(name), Some(val)) = (it.next(), it.next()) {
            if let (Some(&j), Ok(v)) = (index.get(name), val.parse::<f64>()) {
                x[j] = v;
            }
        }
    }
    x
}

impl ExternalSolver {
    pub fn solve(&self, inst: &MipInstance, workdir: &std::path::Path, feas_tol: f64) -> Result<SolveResult, SolveError> {
        let lp_path = workdir.join(format!("{}.lp", sanitize(&inst.name)));
        let sol_path = workdir.join(format!("{}.sol", sanitize(&inst.name)));
        export_lp_file(inst, &lp_path)?;
        let clock = Clock::new(ClockMode::Wall);
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| a.replace("{lp}", &lp_path.display().to_string()).replace("{sol}", &sol_path.display().to_string()))
            .collect();
        let status = std::process::Command::new(&self.command)
            .args(&args)
            .status()
            .map_err(|e| MipError::io(std::path::Path::new(&self.command), e))?;
        let elapsed = clock.elapsed();
        let text = match std::fs::read_to_string(&sol_path) {
            Ok(t) if status.success() => t,
            _ => {
                return Ok(SolveResult {
                    status: SolveStatus::TimeLimit,
                    incumbents: Vec::new(),
                    best_solution: None,
                    best_bound: f64::NEG_INFINITY,
                    nodes: 0,
                    pool: Vec::new(),
                    elapsed,
                })
            }
        };
        let sol = Solution::evaluate(inst, parse_solution_lines(inst, &text), feas_tol, SolutionSource::Solver)?;
        let feasible = sol.feasible;
        Ok(SolveResult {
            status: if feasible { SolveStatus::Feasible } else { SolveStatus::TimeLimit },
            incumbents: if feasible { vec![(elapsed, sol.objective)] } else { Vec::new() },
            best_bound: f64::NEG_INFINITY,
            pool: if feasible { vec![sol.clone()] } else { Vec::new() },
            best_solution: feasible.then_some(sol),
            nodes: 0,
            elapsed,
        })
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::VarKind;

    fn toy() -> MipInstance {
        let mut m = MipInstance::new("toy", "test", 0);
        m.add_var("x1", VarKind::GeneralInteger, 0.0, 2.0, -1.0);
        m.add_var("x2", VarKind::GeneralInteger, 0.0, 2.0, -2.0);
        m.add_row(vec![(0, 1.0), (1, 1.0)], Sense::LE, 3.0);
        m
    }

    #[test]
    fn toy_matches_lattice_brute_force() {
        let m = toy();
        let mut best = f64::INFINITY;
        for a in 0..=2 {
            for b in 0..=2 {
                if a + b <= 3 {
                    best = best.min(-(a as f64) - 2.0 * b as f64);
                }
            }
        }
        let r = solve_mip(&m, &SolverConfig::with_node_limit(1000)).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.best_objective(), Some(best));
        assert_eq!(r.best_solution.unwrap().values, vec![1.0, 2.0]);
    }

    #[test]
    fn continuous_instance_equals_lp() {
        let mut m = toy();
        m.kind = vec![VarKind::Continuous; 2];
        m.rows[0].rhs = 2.5;
        let lp = crate::lp::solve_lp_relaxation(&m).unwrap();
        let r = solve_mip(&m, &SolverConfig::default()).unwrap();
        assert_eq!(r.nodes, 1);
        assert_eq!(r.best_objective(), Some(lp.objective));
    }

    #[test]
    fn infeasible_is_proven() {
        let mut m = toy();
        m.add_row(vec![(0, 2.0)], Sense::EQ, 1.0);
        let r = solve_mip(&m, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.best_solution.is_none());
    }

    #[test]
    fn trace_is_strictly_improving() {
        let mut m = MipInstance::new("k", "test", 0);
        let w = [3.0, 5.0, 7.0, 4.0, 6.0, 9.0, 2.0, 8.0];
        for (j, wj) in w.iter().enumerate() {
            m.add_var(format!("y{j}"), VarKind::GeneralInteger, 0.0, 3.0, -(wj + (j % 3) as f64));
        }
        m.add_row(w.iter().enumerate().map(|(j, &a)| (j, a)).collect(), Sense::LE, 23.5);
        let r = solve_mip(&m, &SolverConfig { node_order: NodeOrder::DepthFirst, ..Default::default() }).unwrap();
        assert!(r.incumbents.windows(2).all(|p| p[1].1 < p[0].1 && p[1].0 >= p[0].0));
        assert_eq!(r.incumbents.last().unwrap().1, r.best_objective().unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { feas_tol: 0.1, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { node_limit: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn pool_of_three_points() {
        // 2a + 3b <= 3, a, b binary: feasible points (0,0), (1,0), (0,1)
        let mut m = MipInstance::new("p", "test", 0);
        m.add_var("a", VarKind::Binary, 0.0, 1.0, -1.0);
        m.add_var("b", VarKind::Binary, 0.0, 1.0, -1.5);
        m.add_row(vec![(0, 2.0), (1, 3.0)], Sense::LE, 3.0);
        let (pool, _) = collect_solution_pool(&m, 50, &SolverConfig::default(), 2).unwrap();
        assert_eq!(pool.len(), 3);
        let objs: Vec<f64> = pool.iter().map(|s| s.objective).collect();
        assert_eq!(objs, vec![-1.5, -1.0, 0.0]);
        let (one, _) = collect_solution_pool(&m, 1, &SolverConfig::default(), 2).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].objective, -1.5);
    }

    #[test]
    fn lp_export_structure_and_round_trip() {
        let m = toy();
        let text = to_lp_string(&m);
        assert_eq!(text.lines().filter(|l| l.trim_start().starts_with("obj:")).count(), 1);
        assert_eq!(text.lines().filter(|l| l.trim_start().starts_with("c0:")).count(), 1);
        let gens = text.split("Generals\n").nth(1).unwrap().lines().next().unwrap();
        assert_eq!(gens.split_whitespace().count(), 2);
        let back = parse_lp_str(&text).unwrap();
        assert_eq!(back.objective, m.objective);
        assert_eq!(back.rows, m.rows);
        assert_eq!(back.kind, m.kind);
        assert_eq!((back.lower.clone(), back.upper.clone()), (m.lower.clone(), m.upper.clone()));
    }

    #[test]
    fn solution_lines_parse_by_name() {
        let m = toy();
        let x = parse_solution_lines(&m, "# comment\nx2 2\nx1 1\nbogus 4\n");
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[cfg(unix)]
    #[test]
    fn external_adapter_reads_solution_file() {
        let dir = tempfile::tempdir().unwrap();
        let ext = ExternalSolver {
            command: "sh".into(),
            args: vec!["-c".into(), "printf 'x1 1\\nx2 2\\n' > \"$1\"".into(), "sh".into(), "{sol}".into()],
        };
        let r = ext.solve(&toy(), dir.path(), 1e-6).unwrap();
        assert_eq!(r.status, SolveStatus::Feasible);
        assert_eq!(r.best_objective(), Some(-5.0));
        assert!(dir.path().join("toy.lp").exists());
    }
}
