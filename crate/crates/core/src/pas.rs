//! Predict-and-search: turn scores into a trust-region sub-MIP, solve it,
//! and map the result back to the original variables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gat::{forward, forward_work, GatError, GatParams, Prediction};
use crate::graph::{encode_with_identity, GraphError};
use crate::milp::{solve_mip_with_clock, SolveError, SolveResult, SolveStatus, SolverConfig};
use crate::mip::{MipError, MipInstance, Sense, Solution, VarKind};
use crate::util::Clock;

#[derive(Debug, Error)]
pub enum PasError {
    #[error("requested {requested} variables but only {eligible} are eligible")]
    Selection { requested: usize, eligible: usize },
    #[error("invalid neighborhood: {0}")]
    Spec(String),
    #[error("score vector has {got} entries for {expected} variables")]
    Scores { expected: usize, got: usize },
    #[error("projected solution violates the original instance (max violation {0:e})")]
    Unsound(f64),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mip(#[from] MipError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PasVariant {
    /// Fix the lowest scores towards zero and the highest away from zero.
    BinaryPas,
    /// Fix only the lowest scores towards zero.
    IdPas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub variant: PasVariant,
    /// Variables tentatively fixed to zero, ascending index.
    pub x0: Vec<usize>,
    /// Variables tentatively fixed away from zero (binary variant only).
    pub x1: Vec<usize>,
    /// Maximum number of tentative fixings that may be violated.
    pub delta: usize,
}

impl NeighborhoodSpec {
    pub fn k0(&self) -> usize {
        self.x0.len()
    }

    pub fn k1(&self) -> usize {
        self.x1.len()
    }

    pub fn validate(&self, inst: &MipInstance) -> Result<(), PasError> {
        let n = inst.num_vars();
        let mut seen = vec![false; n];
        for &i in self.x0.iter().chain(&self.x1) {
            if i >= n {
                return Err(PasError::Spec(format!("index {i} out of range")));
            }
            if seen[i] {
                return Err(PasError::Spec(format!("variable {i} fixed twice")));
            }
            seen[i] = true;
        }
        if self.variant == PasVariant::IdPas && !self.x1.is_empty() {
            return Err(PasError::Spec("X1 must be empty for IdPas".into()));
        }
        let elig = match self.variant {
            PasVariant::IdPas => zero_eligible(inst),
            PasVariant::BinaryPas => binary_eligible(inst),
        };
        for &i in self.x0.iter().chain(&self.x1) {
            if !elig[i] {
                return Err(PasError::Spec(format!("variable {} is not eligible for fixing", inst.var_names[i])));
            }
        }
        Ok(())
    }
}

/// Integer variables with finite bounds whose domain contains zero.
pub fn zero_eligible(inst: &MipInstance) -> Vec<bool> {
    (0..inst.num_vars())
        .map(|i| {
            let (lb, ub) = (inst.lower[i], inst.upper[i]);
            inst.kind[i].is_integer() && lb.is_finite() && ub.is_finite() && lb <= 0.0 && ub >= 0.0
        })
        .collect()
}

/// Candidates for the binary variant: integer variables with domain `[0, ub]`, `ub >= 1`.
/// For binaries this is every binary variable.
pub fn binary_eligible(inst: &MipInstance) -> Vec<bool> {
    (0..inst.num_vars())
        .map(|i| inst.kind[i].is_integer() && inst.lower[i] == 0.0 && inst.upper[i].is_finite() && inst.upper[i] >= 1.0)
        .collect()
}

fn check_scores(pred: &Prediction, inst: &MipInstance) -> Result<(), PasError> {
    if pred.scores.len() != inst.num_vars() {
        return Err(PasError::Scores { expected: inst.num_vars(), got: pred.scores.len() });
    }
    Ok(())
}

/// Eligible indices ordered by ascending score, ties by ascending index.
fn ascending(pred: &Prediction, elig: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..elig.len()).filter(|&i| elig[i] && pred.valid[i]).collect();
    idx.sort_by(|&a, &b| pred.scores[a].total_cmp(&pred.scores[b]).then(a.cmp(&b)));
    idx
}

/// The `k0` eligible variables with the smallest scores.
pub fn select_x0(pred: &Prediction, inst: &MipInstance, k0: usize) -> Result<Vec<usize>, PasError> {
    check_scores(pred, inst)?;
    let order = ascending(pred, &zero_eligible(inst));
    if k0 > order.len() {
        return Err(PasError::Selection { requested: k0, eligible: order.len() });
    }
    let mut x0 = order[..k0].to_vec();
    x0.sort_unstable();
    Ok(x0)
}

/// Smallest-`k0` and largest-`k1` scores among binary-variant candidates.
/// Ties in `X1` prefer the larger index; `X0` is chosen first.
pub fn select_x0_x1_binary(pred: &Prediction, inst: &MipInstance, k0: usize, k1: usize) -> Result<(Vec<usize>, Vec<usize>), PasError> {
    check_scores(pred, inst)?;
    let order = ascending(pred, &binary_eligible(inst));
    if k0 + k1 > order.len() {
        return Err(PasError::Selection { requested: k0 + k1, eligible: order.len() });
    }
    let mut x0 = order[..k0].to_vec();
    let mut rest = order[k0..].to_vec();
    rest.sort_by(|&a, &b| pred.scores[b].total_cmp(&pred.scores[a]).then(b.cmp(&a)));
    let mut x1 = rest[..k1].to_vec();
    x0.sort_unstable();
    x1.sort_unstable();
    Ok((x0, x1))
}

/// `k0 = max(1, floor(fraction * eligible))`, capped at `eligible`.
pub fn k_from_fraction(fraction: f64, eligible: usize) -> usize {
    ((fraction * eligible as f64 + 1e-9).floor() as usize).max(1).min(eligible)
}

/// Adds the trust-region constraints. Original variables keep their
/// indices; indicator variables are appended after them with zero cost.
pub fn build_neighborhood_mip(inst: &MipInstance, spec: &NeighborhoodSpec) -> Result<MipInstance, PasError> {
    spec.validate(inst)?;
    let mut sub = inst.clone();
    sub.name = format!("{}-pas", inst.name);
    let mut card: Vec<(usize, f64)> = Vec::new();
    let mut rhs = spec.delta as f64;
    let indicator = |sub: &mut MipInstance, i: usize, card: &mut Vec<(usize, f64)>| {
        let (lb, ub) = (inst.lower[i], inst.upper[i]);
        let z = sub.add_var(format!("z#{}", inst.var_names[i]), VarKind::Binary, 0.0, 1.0, 0.0);
        if ub > 0.0 {
            sub.add_row(vec![(i, 1.0), (z, -ub)], Sense::LE, 0.0);
        } else {
            sub.add_row(vec![(i, 1.0)], Sense::LE, 0.0);
        }
        if lb < 0.0 {
            sub.add_row(vec![(i, 1.0), (z, -lb)], Sense::GE, 0.0);
        }
        card.push((z, 1.0));
    };
    match spec.variant {
        PasVariant::IdPas => {
            for &i in &spec.x0 {
                indicator(&mut sub, i, &mut card);
            }
        }
        PasVariant::BinaryPas => {
            for &i in &spec.x0 {
                if inst.kind[i] == VarKind::Binary {
                    card.push((i, 1.0));
                } else {
                    indicator(&mut sub, i, &mut card);
                }
            }
            for &i in &spec.x1 {
                if inst.kind[i] == VarKind::Binary {
                    card.push((i, -1.0));
                    rhs -= 1.0;
                } else {
                    // y = 1 allows x = 0; y = 0 forces x >= 1.
                    let y = sub.add_var(format!("y#{}", inst.var_names[i]), VarKind::Binary, 0.0, 1.0, 0.0);
                    sub.add_row(vec![(i, 1.0), (y, 1.0)], Sense::GE, 1.0);
                    card.push((y, 1.0));
                }
            }
        }
    }
    if !card.is_empty() {
        sub.add_row(card, Sense::LE, rhs);
    }
    Ok(sub)
}

/// Restricts a solution of the sub-MIP to the original variables and
/// re-checks it against the original instance.
pub fn project(inst: &MipInstance, sol: &Solution, tol: f64) -> Result<Solution, PasError> {
    let values = sol.values[..inst.num_vars()].to_vec();
    let report = inst.check_feasibility(&values, tol)?;
    if !report.feasible {
        return Err(PasError::Unsound(
            report.max_row_violation.max(report.max_bound_violation).max(report.max_integrality_violation),
        ));
    }
    Ok(Solution::evaluate(inst, values, tol, sol.source)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PasSettings {
    pub variant: PasVariant,
    pub k0: usize,
    pub k1: usize,
    pub delta: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PasResult {
    /// Result in the original variable space. `best_bound` is the bound of
    /// the restricted problem, not of the original one.
    pub result: SolveResult,
    pub spec: NeighborhoodSpec,
    /// Clock seconds spent on encoding and inference before the solve.
    pub inference_seconds: f64,
}

/// Scores produced once per instance, reusable across neighborhood settings.
#[derive(Debug, Clone)]
pub struct ScoredInstance {
    pub prediction: Prediction,
    /// Work units charged to the clock for encoding and inference.
    pub inference_work: f64,
}

/// Encodes `inst` with the model's identity width and runs one forward pass.
pub fn score_instance(inst: &MipInstance, params: &GatParams) -> Result<ScoredInstance, PasError> {
    let graph = encode_with_identity(inst, params.dims.identity_width)?;
    let prediction = forward(params, &graph)?;
    let encode_work = (graph.var_features.len() + graph.cons_features.len() + 8 * graph.edges.len()) as f64;
    Ok(ScoredInstance { prediction, inference_work: encode_work + forward_work(&params.dims, &graph) })
}

pub fn neighborhood_for(pred: &Prediction, inst: &MipInstance, s: &PasSettings) -> Result<NeighborhoodSpec, PasError> {
    let (x0, x1) = match s.variant {
        PasVariant::IdPas => (select_x0(pred, inst, s.k0)?, Vec::new()),
        PasVariant::BinaryPas => select_x0_x1_binary(pred, inst, s.k0, s.k1)?,
    };
    Ok(NeighborhoodSpec { variant: s.variant, x0, x1, delta: s.delta })
}

/// Solves the neighborhood sub-MIP for precomputed scores. The inference
/// work is charged to the clock first, so traces include it.
pub fn run_pas_scored(
    inst: &MipInstance,
    scored: &ScoredInstance,
    settings: &PasSettings,
    cfg: &SolverConfig,
) -> Result<PasResult, PasError> {
    let mut clock = Clock::new(cfg.clock);
    clock.charge(scored.inference_work);
    let inference_seconds = clock.elapsed();
    let spec = neighborhood_for(&scored.prediction, inst, settings)?;
    let sub = build_neighborhood_mip(inst, &spec)?;
    let raw = solve_mip_with_clock(&sub, cfg, clock)?;
    let best_solution = raw.best_solution.as_ref().map(|s| project(inst, s, cfg.feas_tol)).transpose()?;
    let pool = raw.pool.iter().map(|s| project(inst, s, cfg.feas_tol)).collect::<Result<Vec<_>, _>>()?;
    let result = SolveResult {
        status: raw.status,
        incumbents: raw.incumbents,
        best_solution,
        best_bound: raw.best_bound,
        nodes: raw.nodes,
        pool,
        elapsed: raw.elapsed,
    };
    Ok(PasResult { result, spec, inference_seconds })
}

/// Scores `inst` with the model once and searches the resulting neighborhood.
pub fn run_pas(inst: &MipInstance, params: &GatParams, settings: &PasSettings, cfg: &SolverConfig) -> Result<PasResult, PasError> {
    let scored = score_instance(inst, params)?;
    run_pas_scored(inst, &scored, settings, cfg)
}

impl PasResult {
    pub fn is_infeasible(&self) -> bool {
        self.result.status == SolveStatus::Infeasible
    }
}
